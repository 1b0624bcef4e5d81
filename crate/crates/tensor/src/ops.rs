//! Differentiable operations. Each method computes the forward value and
//! registers a backward closure on the graph.

use std::rc::Rc;

use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::kernels::attention::{self, AttnDims};
use crate::kernels::conv::{self, conv_out_dim, ConvDims, ConvTDims, PaddingMode};
use crate::kernels::{pixel, resample, warp};
use crate::scalar::Real;
use crate::tensor::{inverse_perm, Tensor};

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn nchw<T: Real>(op: &'static str, x: &Var<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => shape_err(op, format!("expected N×C×H×W, got {:?}", x.shape())),
    }
}

impl<T: Real> Graph<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x + y)?;
        self.record("add", Rc::new(v), &[a, b], |g| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x - y)?;
        self.record("sub", Rc::new(v), &[a, b], |g| {
            vec![Some(g.clone()), Some(g.scale(-T::one()))]
        })
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x * y)?;
        let (ra, rb) = (a.rc(), b.rc());
        self.record("mul", Rc::new(v), &[a, b], move |g| {
            vec![
                Some(g.zip_map(&rb, |u, w| u * w).unwrap()),
                Some(g.zip_map(&ra, |u, w| u * w).unwrap()),
            ]
        })
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, a: &Var<T>, s: f64) -> Result<Var<T>> {
        let s = T::lit(s);
        self.record("scale", Rc::new(a.value().scale(s)), &[a], move |g| {
            vec![Some(g.scale(s))]
        })
    }

    /// `gate · a` for a single-element `gate`.
    pub fn mul_scalar(&self, a: &Var<T>, gate: &Var<T>) -> Result<Var<T>> {
        if gate.value().len() != 1 {
            return shape_err("mul_scalar", format!("gate must be scalar, got {:?}", gate.shape()));
        }
        let s = gate.value().item();
        let (ra, gshape) = (a.rc(), gate.shape().to_vec());
        self.record("mul_scalar", Rc::new(a.value().scale(s)), &[a, gate], move |g| {
            let dg: T = g.data().iter().zip(ra.data()).map(|(&u, &w)| u * w).sum();
            vec![Some(g.scale(s)), Some(Tensor::full(&gshape, dg))]
        })
    }

    pub fn leaky_relu(&self, a: &Var<T>, slope: f64) -> Result<Var<T>> {
        let s = T::lit(slope);
        let v = a.value().map(|x| if x > T::zero() { x } else { x * s });
        let ra = a.rc();
        self.record("leaky_relu", Rc::new(v), &[a], move |g| {
            vec![Some(g.zip_map(&ra, |u, x| if x > T::zero() { u } else { u * s }).unwrap())]
        })
    }

    pub fn sum(&self, a: &Var<T>) -> Result<Var<T>> {
        let shape = a.shape().to_vec();
        self.record("sum", Rc::new(Tensor::scalar(a.value().sum())), &[a], move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self, a: &Var<T>) -> Result<Var<T>> {
        let shape = a.shape().to_vec();
        let n = T::lit(a.value().len() as f64);
        self.record("mean", Rc::new(Tensor::scalar(a.value().mean())), &[a], move |g| {
            vec![Some(Tensor::full(&shape, g.item() / n))]
        })
    }

    /// `Σ a ∘ w` for a constant weight tensor; used to reduce op outputs in
    /// gradient checks.
    pub fn weighted_sum(&self, a: &Var<T>, w: &Tensor<T>) -> Result<Var<T>> {
        if a.shape() != w.shape() {
            return shape_err("weighted_sum", format!("{:?} vs {:?}", a.shape(), w.shape()));
        }
        let s: T = a.value().data().iter().zip(w.data()).map(|(&x, &y)| x * y).sum();
        let w = w.clone();
        self.record("weighted_sum", Rc::new(Tensor::scalar(s)), &[a], move |g| {
            vec![Some(w.scale(g.item()))]
        })
    }

    /// Mean of `sqrt((a − b)² + eps²)` over all elements, evaluated as
    /// `eps + mean(r² / (sqrt(r² + eps²) + eps))` so a zero residual gives
    /// exactly `eps`.
    pub fn charbonnier(&self, a: &Var<T>, b: &Var<T>, eps: f64) -> Result<Var<T>> {
        same_shape("charbonnier", a, b)?;
        let e = T::lit(eps);
        let e2 = T::lit(eps * eps);
        let n = T::lit(a.value().len() as f64);
        let excess: T = a
            .value()
            .data()
            .iter()
            .zip(b.value().data())
            .map(|(&x, &y)| {
                let r2 = (x - y) * (x - y);
                r2 / ((r2 + e2).sqrt() + e)
            })
            .sum();
        let (ra, rb) = (a.rc(), b.rc());
        self.record("charbonnier", Rc::new(Tensor::scalar(e + excess / n)), &[a, b], move |g| {
            let k = g.item() / n;
            let da = ra
                .zip_map(&rb, |x, y| k * (x - y) / ((x - y) * (x - y) + e2).sqrt())
                .unwrap();
            let db = da.scale(-T::one());
            vec![Some(da), Some(db)]
        })
    }

    pub fn reshape(&self, a: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let v = a.to_tensor().reshape(shape)?;
        let orig = a.shape().to_vec();
        self.record("reshape", Rc::new(v), &[a], move |g| {
            vec![Some(g.clone().reshape(&orig).unwrap())]
        })
    }

    pub fn permute(&self, a: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let v = a.value().permute(perm)?;
        let inv = inverse_perm(perm);
        self.record("permute", Rc::new(v), &[a], move |g| {
            vec![Some(g.permute(&inv).unwrap())]
        })
    }

    pub fn concat(&self, parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let v = Tensor::concat(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        self.record("concat", Rc::new(v), parts, move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&len| {
                    let piece = g.narrow(axis, start, len).unwrap();
                    start += len;
                    Some(piece)
                })
                .collect()
        })
    }

    pub fn narrow(&self, a: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let v = a.value().narrow(axis, start, len)?;
        let shape = a.shape().to_vec();
        self.record("narrow", Rc::new(v), &[a], move |g| {
            let mut full = Tensor::zeros(&shape);
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let chunk = len * inner;
            for o in 0..outer {
                let dst = (o * shape[axis] + start) * inner;
                full.data_mut()[dst..dst + chunk].copy_from_slice(&g.data()[o * chunk..(o + 1) * chunk]);
            }
            vec![Some(full)]
        })
    }

    /// 2-D matrix product `[M×K]·[K×N]`.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (m, k, n) = match (a.shape(), b.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return shape_err("matmul", format!("{:?} · {:?}", sa, sb)),
        };
        let mut out = vec![T::zero(); m * n];
        conv::matmul_into(m, k, n, a.value().data(), b.value().data(), &mut out);
        let (ra, rb) = (a.rc(), b.rc());
        self.record("matmul", Rc::new(Tensor::new(&[m, n], out)?), &[a, b], move |g| {
            // dA = G Bᵀ, dB = Aᵀ G
            let mut da = vec![T::zero(); m * k];
            T::gemm(
                m, n, k, T::one(), g.data(), n as isize, 1, rb.data(), 1, n as isize, T::zero(),
                &mut da, k as isize, 1,
            );
            let mut db = vec![T::zero(); k * n];
            T::gemm(
                k, m, n, T::one(), ra.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(),
                &mut db, n as isize, 1,
            );
            vec![
                Some(Tensor::new(&[m, k], da).unwrap()),
                Some(Tensor::new(&[k, n], db).unwrap()),
            ]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&self, a: &Var<T>) -> Result<Var<T>> {
        let cols = match a.shape().last() {
            Some(&c) if c > 0 => c,
            _ => return shape_err("softmax_rows", format!("bad shape {:?}", a.shape())),
        };
        if !a.value().all_finite() {
            return Err(crate::TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut v = a.to_tensor();
        attention::softmax_rows_inplace(v.data_mut(), cols);
        let out = Rc::new(v);
        let saved = Rc::clone(&out);
        let shape = a.shape().to_vec();
        self.record("softmax_rows", out, &[a], move |g| {
            let dx = attention::softmax_rows_backward(saved.data(), g.data(), cols);
            vec![Some(Tensor::new(&shape, dx).unwrap())]
        })
    }

    /// Batched attention `softmax(scale·QKᵀ)·V` with `q: B×N×dk`,
    /// `k: B×M×dk`, `v: B×M×dv`.
    pub fn attention(&self, q: &Var<T>, k: &Var<T>, v: &Var<T>, scale: f64) -> Result<Var<T>> {
        let d = match (q.shape(), k.shape(), v.shape()) {
            ([b, n, dk], [b2, m, dk2], [b3, m2, dv]) if b == b2 && b == b3 && dk == dk2 && m == m2 => {
                AttnDims {
                    batch: *b,
                    queries: *n,
                    keys: *m,
                    dk: *dk,
                    dv: *dv,
                }
            }
            (a, b, c) => return shape_err("attention", format!("q {:?}, k {:?}, v {:?}", a, b, c)),
        };
        let s = T::lit(scale);
        let y = attention::forward(q.value().data(), k.value().data(), v.value().data(), &d, s);
        let (rq, rk, rv) = (q.rc(), k.rc(), v.rc());
        let out = Tensor::new(&[d.batch, d.queries, d.dv], y)?;
        self.record("attention", Rc::new(out), &[q, k, v], move |g| {
            let (dq, dk, dv) = attention::backward(rq.data(), rk.data(), rv.data(), g.data(), &d, s);
            vec![
                Some(Tensor::new(rq.shape(), dq).unwrap()),
                Some(Tensor::new(rk.shape(), dk).unwrap()),
                Some(Tensor::new(rv.shape(), dv).unwrap()),
            ]
        })
    }

    /// 2-D convolution. `w: C_out×C_in×kH×kW`, `b: C_out`.
    pub fn conv2d(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        stride: usize,
        pad: usize,
        mode: PaddingMode,
    ) -> Result<Var<T>> {
        let (n, c, h, wd) = nchw("conv2d", x)?;
        let (co, ci, kh, kw) = match *w.shape() {
            [co, ci, kh, kw] => (co, ci, kh, kw),
            _ => return shape_err("conv2d", format!("weight must be 4-D, got {:?}", w.shape())),
        };
        if ci != c {
            return shape_err("conv2d", format!("input has {} channels, weight expects {}", c, ci));
        }
        if let Some(b) = b {
            if b.shape() != [co] {
                return shape_err("conv2d", format!("bias {:?} for {} outputs", b.shape(), co));
            }
        }
        if stride == 0 {
            return invalid("conv2d", "stride must be ≥ 1");
        }
        let (Some(oh), Some(ow)) = (conv_out_dim(h, kh, stride, pad), conv_out_dim(wd, kw, stride, pad)) else {
            return shape_err(
                "conv2d",
                format!("{}×{} input with pad {} is smaller than the {}×{} kernel", h, wd, pad, kh, kw),
            );
        };
        if self.checks_finite() && !w.value().all_finite() {
            return Err(crate::TensorError::NonFinite { op: "conv2d weights" });
        }
        let dims = ConvDims {
            batch: n,
            c_in: c,
            c_out: co,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            pad,
            mode,
            out_h: oh,
            out_w: ow,
        };
        let y = conv::conv2d_forward(
            x.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
            &dims,
        );
        let out = Tensor::new(&[n, co, oh, ow], y)?;
        let (rx, rw) = (x.rc(), w.rc());
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.record("conv2d", Rc::new(out), &parents, move |g| {
            let (dx, dw, db) = conv::conv2d_backward(rx.data(), rw.data(), g.data(), &dims);
            let mut grads = vec![
                Some(Tensor::new(rx.shape(), dx).unwrap()),
                Some(Tensor::new(rw.shape(), dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(Tensor::new(&[dims.c_out], db).unwrap()));
            }
            grads
        })
    }

    /// Transposed convolution. `w: C_in×C_out×kH×kW`; output side
    /// `(in − 1)·stride + k − 2·pad`.
    pub fn conv_transpose2d(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<T>> {
        let (n, c, h, wd) = nchw("conv_transpose2d", x)?;
        let (ci, co, kh, kw) = match *w.shape() {
            [ci, co, kh, kw] => (ci, co, kh, kw),
            _ => return shape_err("conv_transpose2d", format!("weight must be 4-D, got {:?}", w.shape())),
        };
        if ci != c {
            return shape_err(
                "conv_transpose2d",
                format!("input has {} channels, weight expects {}", c, ci),
            );
        }
        if let Some(b) = b {
            if b.shape() != [co] {
                return shape_err("conv_transpose2d", format!("bias {:?} for {} outputs", b.shape(), co));
            }
        }
        if stride == 0 {
            return invalid("conv_transpose2d", "stride must be ≥ 1");
        }
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + kw).checked_sub(2 * pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return shape_err("conv_transpose2d", "padding larger than output");
        };
        if oh == 0 || ow == 0 {
            return shape_err("conv_transpose2d", "empty output");
        }
        let dims = ConvTDims {
            batch: n,
            c_in: c,
            c_out: co,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            pad,
            out_h: oh,
            out_w: ow,
        };
        let y = conv::conv_transpose2d_forward(
            x.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
            &dims,
        );
        let out = Tensor::new(&[n, co, oh, ow], y)?;
        let (rx, rw) = (x.rc(), w.rc());
        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.record("conv_transpose2d", Rc::new(out), &parents, move |g| {
            let (dx, dw, db) = conv::conv_transpose2d_backward(rx.data(), rw.data(), g.data(), &dims);
            let mut grads = vec![
                Some(Tensor::new(rx.shape(), dx).unwrap()),
                Some(Tensor::new(rw.shape(), dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(Tensor::new(&[dims.c_out], db).unwrap()));
            }
            grads
        })
    }

    /// `B×(C·r²)×H×W → B×C×rH×rW`.
    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let (n, c, h, w) = nchw("pixel_shuffle", x)?;
        if r == 0 || c % (r * r) != 0 {
            return shape_err(
                "pixel_shuffle",
                format!("{} channels not divisible by r² = {}", c, r * r),
            );
        }
        let co = c / (r * r);
        let y = pixel::shuffle(x.value().data(), n, co, h, w, r);
        let shape = x.shape().to_vec();
        self.record("pixel_shuffle", Rc::new(Tensor::new(&[n, co, h * r, w * r], y)?), &[x], move |g| {
            vec![Some(Tensor::new(&shape, pixel::unshuffle(g.data(), n, co, h, w, r)).unwrap())]
        })
    }

    /// `B×C×rH×rW → B×(C·r²)×H×W`.
    pub fn pixel_unshuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let (n, c, h, w) = nchw("pixel_unshuffle", x)?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return shape_err("pixel_unshuffle", format!("{}×{} not divisible by {}", h, w, r));
        }
        let (bh, bw) = (h / r, w / r);
        let y = pixel::unshuffle(x.value().data(), n, c, bh, bw, r);
        let shape = x.shape().to_vec();
        self.record(
            "pixel_unshuffle",
            Rc::new(Tensor::new(&[n, c * r * r, bh, bw], y)?),
            &[x],
            move |g| vec![Some(Tensor::new(&shape, pixel::shuffle(g.data(), n, c, bh, bw, r)).unwrap())],
        )
    }

    /// Bilinear backward warp of `src: B×C×H×W` by `flow: B×2×H×W`
    /// (channel 0 horizontal, channel 1 vertical, in pixels).
    pub fn warp(&self, src: &Var<T>, flow: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = nchw("warp", src)?;
        if flow.shape() != [n, 2, h, w] {
            return shape_err(
                "warp",
                format!("flow {:?} does not match source {:?}", flow.shape(), src.shape()),
            );
        }
        let y = warp::forward(src.value().data(), flow.value().data(), n, c, h, w);
        let (rs, rf) = (src.rc(), flow.rc());
        self.record("warp", Rc::new(Tensor::new(src.shape(), y)?), &[src, flow], move |g| {
            let (ds, df) = warp::backward(rs.data(), rf.data(), g.data(), n, c, h, w);
            vec![
                Some(Tensor::new(rs.shape(), ds).unwrap()),
                Some(Tensor::new(rf.shape(), df).unwrap()),
            ]
        })
    }

    pub fn avg_pool2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = nchw("avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err("avg_pool2", format!("{}×{} is not even", h, w));
        }
        let y = resample::avg_pool2(x.value().data(), n * c, h, w);
        let shape = x.shape().to_vec();
        self.record("avg_pool2", Rc::new(Tensor::new(&[n, c, h / 2, w / 2], y)?), &[x], move |g| {
            vec![Some(Tensor::new(&shape, resample::avg_pool2_backward(g.data(), n * c, h, w)).unwrap())]
        })
    }

    pub fn upsample2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = nchw("upsample2", x)?;
        let y = resample::upsample2(x.value().data(), n * c, h, w);
        let shape = x.shape().to_vec();
        self.record("upsample2", Rc::new(Tensor::new(&[n, c, 2 * h, 2 * w], y)?), &[x], move |g| {
            vec![Some(Tensor::new(&shape, resample::upsample2_backward(g.data(), n * c, h, w)).unwrap())]
        })
    }
}
