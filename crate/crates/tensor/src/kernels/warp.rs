//! Backward bilinear warping with border clamping.
//!
//! `out[y, x] = bilinear(src, x + flow_x[y, x], y + flow_y[y, x])`, sample
//! coordinates clamped to `[0, W−1] × [0, H−1]`.

use rayon::prelude::*;

use crate::scalar::Real;

#[derive(Clone, Copy)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: T,
    wy: T,
    /// zero when the coordinate was clamped
    gx: T,
    gy: T,
}

#[inline]
fn axis<T: Real>(coord: T, limit: usize) -> (usize, usize, T, T) {
    let hi = T::lit((limit - 1) as f64);
    let (c, g) = if coord < T::zero() {
        (T::zero(), T::zero())
    } else if coord > hi {
        (hi, T::zero())
    } else {
        (coord, T::one())
    };
    let f = c.floor();
    let i0 = f.to_f64() as usize;
    let i1 = (i0 + 1).min(limit - 1);
    (i0, i1, c - f, g)
}

#[inline]
fn tap<T: Real>(flow: &[T], plane: usize, y: usize, x: usize, h: usize, w: usize) -> Tap<T> {
    let i = y * w + x;
    let sx = T::lit(x as f64) + flow[i];
    let sy = T::lit(y as f64) + flow[plane + i];
    let (x0, x1, wx, gx) = axis(sx, w);
    let (y0, y1, wy, gy) = axis(sy, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        wx,
        wy,
        gx,
        gy,
    }
}

pub fn forward<T: Real>(src: &[T], flow: &[T], batch: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); batch * c * plane];
    out.par_chunks_mut(c * plane).enumerate().for_each(|(n, o)| {
        let fl = &flow[n * 2 * plane..(n + 1) * 2 * plane];
        let s = &src[n * c * plane..(n + 1) * c * plane];
        let one = T::one();
        for y in 0..h {
            for x in 0..w {
                let t = tap(fl, plane, y, x, h, w);
                for ch in 0..c {
                    let p = &s[ch * plane..(ch + 1) * plane];
                    let top = p[t.y0 * w + t.x0] * (one - t.wx) + p[t.y0 * w + t.x1] * t.wx;
                    let bot = p[t.y1 * w + t.x0] * (one - t.wx) + p[t.y1 * w + t.x1] * t.wx;
                    o[ch * plane + y * w + x] = top * (one - t.wy) + bot * t.wy;
                }
            }
        }
    });
    out
}

/// Returns `(dsrc, dflow)`.
pub fn backward<T: Real>(
    src: &[T],
    flow: &[T],
    dy: &[T],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    debug_assert_eq!(src.len(), batch * c * plane);
    let mut dsrc = vec![T::zero(); src.len()];
    let mut dflow = vec![T::zero(); flow.len()];
    dsrc.par_chunks_mut(c * plane)
        .zip(dflow.par_chunks_mut(2 * plane))
        .enumerate()
        .for_each(|(n, (ds, df))| {
            let fl = &flow[n * 2 * plane..(n + 1) * 2 * plane];
            let s = &src[n * c * plane..(n + 1) * c * plane];
            let g = &dy[n * c * plane..(n + 1) * c * plane];
            let one = T::one();
            for y in 0..h {
                for x in 0..w {
                    let t = tap(fl, plane, y, x, h, w);
                    let (mut gfx, mut gfy) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let go = g[ch * plane + y * w + x];
                        let p = &s[ch * plane..(ch + 1) * plane];
                        let d = &mut ds[ch * plane..(ch + 1) * plane];
                        let (a, b) = (p[t.y0 * w + t.x0], p[t.y0 * w + t.x1]);
                        let (cc, dd) = (p[t.y1 * w + t.x0], p[t.y1 * w + t.x1]);
                        d[t.y0 * w + t.x0] += go * (one - t.wx) * (one - t.wy);
                        d[t.y0 * w + t.x1] += go * t.wx * (one - t.wy);
                        d[t.y1 * w + t.x0] += go * (one - t.wx) * t.wy;
                        d[t.y1 * w + t.x1] += go * t.wx * t.wy;
                        gfx += go * ((b - a) * (one - t.wy) + (dd - cc) * t.wy);
                        gfy += go * ((cc - a) * (one - t.wx) + (dd - b) * t.wx);
                    }
                    df[y * w + x] = gfx * t.gx;
                    df[plane + y * w + x] = gfy * t.gy;
                }
            }
        });
    (dsrc, dflow)
}
