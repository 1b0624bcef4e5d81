//! Sub-pixel rearrangement between channels and space.

use crate::scalar::Real;

/// `B×(C·r²)×H×W → B×C×(rH)×(rW)` with
/// `out[c, r·h + a, r·w + b] = in[c·r² + a·r + b, h, w]`.
pub fn shuffle<T: Real>(x: &[T], batch: usize, c_out: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (oh, ow) = (h * r, w * r);
    for n in 0..batch {
        for c in 0..c_out {
            for a in 0..r {
                for b in 0..r {
                    let ic = c * r * r + a * r + b;
                    let src = &x[((n * c_out * r * r + ic) * h) * w..][..h * w];
                    let dst = &mut out[(n * c_out + c) * oh * ow..][..oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(r * y + a) * ow + r * xx + b] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`shuffle`]: `B×C×(rH)×(rW) → B×(C·r²)×H×W`.
pub fn unshuffle<T: Real>(x: &[T], batch: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (oh, ow) = (h * r, w * r);
    for n in 0..batch {
        for ch in 0..c {
            for a in 0..r {
                for b in 0..r {
                    let oc = ch * r * r + a * r + b;
                    let src = &x[(n * c + ch) * oh * ow..][..oh * ow];
                    let dst = &mut out[((n * c * r * r + oc) * h) * w..][..h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(r * y + a) * ow + r * xx + b];
                        }
                    }
                }
            }
        }
    }
    out
}
