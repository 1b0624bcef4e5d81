//! Row softmax and batched scaled dot-product attention.
//!
//! The attention kernel does not keep the `N×M` map after the forward pass;
//! the backward pass recomputes it from `Q` and `K`.

use rayon::prelude::*;

use crate::kernels::conv::matmul_into;
use crate::scalar::Real;

/// In-place max-subtracted softmax over each row of length `cols`.
pub fn softmax_rows_inplace<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_mut(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        let inv = T::one() / s;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Given softmax output `y` and upstream `dy`, `dx = y ∘ (dy − Σ y·dy)` per row.
pub fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &a), &b) in dr.iter_mut().zip(yr).zip(gr) {
            *d = a * (b - dot);
        }
    }
    dx
}

#[derive(Clone, Copy, Debug)]
pub struct AttnDims {
    pub batch: usize,
    pub queries: usize,
    pub keys: usize,
    pub dk: usize,
    pub dv: usize,
}

/// `softmax(scale · Q_b K_bᵀ)` for one batch element, `queries × keys`.
pub fn attention_map<T: Real>(q: &[T], k: &[T], d: &AttnDims, scale: T) -> Vec<T> {
    let mut a = vec![T::zero(); d.queries * d.keys];
    T::gemm(
        d.queries, d.dk, d.keys, scale, q, d.dk as isize, 1, k, 1, d.dk as isize, T::zero(),
        &mut a, d.keys as isize, 1,
    );
    softmax_rows_inplace(&mut a, d.keys);
    a
}

pub fn forward<T: Real>(q: &[T], k: &[T], v: &[T], d: &AttnDims, scale: T) -> Vec<T> {
    let (qs, ks, vs, ys) = (d.queries * d.dk, d.keys * d.dk, d.keys * d.dv, d.queries * d.dv);
    let mut y = vec![T::zero(); d.batch * ys];
    y.par_chunks_mut(ys).enumerate().for_each(|(b, yb)| {
        let a = attention_map(&q[b * qs..(b + 1) * qs], &k[b * ks..(b + 1) * ks], d, scale);
        matmul_into(d.queries, d.keys, d.dv, &a, &v[b * vs..(b + 1) * vs], yb);
    });
    y
}

/// Returns `(dq, dk, dv)`.
pub fn backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    dy: &[T],
    d: &AttnDims,
    scale: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (qs, ks, vs, ys) = (d.queries * d.dk, d.keys * d.dk, d.keys * d.dv, d.queries * d.dv);
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    dq.par_chunks_mut(qs)
        .zip(dk.par_chunks_mut(ks))
        .zip(dv.par_chunks_mut(vs))
        .enumerate()
        .for_each(|(b, ((dqb, dkb), dvb))| {
            let qb = &q[b * qs..(b + 1) * qs];
            let kb = &k[b * ks..(b + 1) * ks];
            let vb = &v[b * vs..(b + 1) * vs];
            let gb = &dy[b * ys..(b + 1) * ys];
            let a = attention_map(qb, kb, d, scale);
            // dV = Aᵀ dY
            T::gemm(
                d.keys, d.queries, d.dv, T::one(), &a, 1, d.keys as isize, gb, d.dv as isize, 1,
                T::zero(), dvb, d.dv as isize, 1,
            );
            // dA = dY Vᵀ
            let mut da = vec![T::zero(); d.queries * d.keys];
            T::gemm(
                d.queries, d.dv, d.keys, T::one(), gb, d.dv as isize, 1, vb, 1, d.dv as isize,
                T::zero(), &mut da, d.keys as isize, 1,
            );
            let dl = softmax_rows_backward(&a, &da, d.keys);
            // dQ = s · dL K ; dK = s · dLᵀ Q
            T::gemm(
                d.queries, d.keys, d.dk, scale, &dl, d.keys as isize, 1, kb, d.dk as isize, 1,
                T::zero(), dqb, d.dk as isize, 1,
            );
            T::gemm(
                d.keys, d.queries, d.dk, scale, &dl, 1, d.keys as isize, qb, d.dk as isize, 1,
                T::zero(), dkb, d.dk as isize, 1,
            );
        });
    (dq, dk, dv)
}
