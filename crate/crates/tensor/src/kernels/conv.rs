//! Direct 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Every kernel here is deterministic: batch elements are processed in
//! parallel but each writes a disjoint output slice, and reductions over the
//! batch (weight and bias gradients) are summed in batch order afterwards.

use rayon::prelude::*;

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PaddingMode {
    #[default]
    Zero,
    Replicate,
}

/// Sliding-window geometry shared by the forward and adjoint kernels.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PaddingMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, pos: isize, limit: usize) -> Option<usize> {
        if pos >= 0 && (pos as usize) < limit {
            Some(pos as usize)
        } else {
            match self.mode {
                PaddingMode::Zero => None,
                PaddingMode::Replicate => Some(pos.clamp(0, limit as isize - 1) as usize),
            }
        }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Unfold one image (`channels × height × width`) into `rows × positions`.
pub fn im2col<T: Real>(img: &[T], win: &Window, cols: &mut [T]) {
    let p = win.positions();
    for c in 0..win.channels {
        let plane = &img[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = (c * win.kh + ky) * win.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..win.out_h {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    let line = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    match win.source(iy, win.height) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(sy) => {
                            let src = &plane[sy * win.width..(sy + 1) * win.width];
                            for (ox, v) in line.iter_mut().enumerate() {
                                let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                                *v = match win.source(ix, win.width) {
                                    Some(sx) => src[sx],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `rows × positions` back into the image.
pub fn col2im<T: Real>(cols: &[T], win: &Window, img: &mut [T]) {
    let p = win.positions();
    for c in 0..win.channels {
        let plane = &mut img[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = (c * win.kh + ky) * win.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..win.out_h {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    let Some(sy) = win.source(iy, win.height) else {
                        continue;
                    };
                    let line = &src[oy * win.out_w..(oy + 1) * win.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        if let Some(sx) = win.source(ix, win.width) {
                            plane[sy * win.width + sx] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `m×k` times `k×n`, overwriting `c`.
pub fn matmul_into<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(
        m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, T::zero(), c, n as isize, 1,
    );
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PaddingMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {
    fn window(&self) -> Window {
        Window {
            channels: self.c_in,
            height: self.height,
            width: self.width,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            mode: self.mode,
            out_h: self.out_h,
            out_w: self.out_w,
        }
    }
}

/// `weight`: `c_out × c_in × kh × kw`; returns `batch × c_out × out_h × out_w`.
pub fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let win = d.window();
    let (k, p) = (win.rows(), win.positions());
    let in_sz = d.c_in * d.height * d.width;
    let mut out = vec![T::zero(); d.batch * d.c_out * p];
    out.par_chunks_mut(d.c_out * p)
        .enumerate()
        .for_each(|(n, o)| {
            let mut cols = vec![T::zero(); k * p];
            im2col(&x[n * in_sz..(n + 1) * in_sz], &win, &mut cols);
            matmul_into(d.c_out, k, p, weight, &cols, o);
            if let Some(b) = bias {
                for (co, plane) in o.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        });
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let win = d.window();
    let (k, p) = (win.rows(), win.positions());
    let in_sz = d.c_in * d.height * d.width;
    let mut dx = vec![T::zero(); x.len()];
    let partial: Vec<Vec<T>> = dx
        .par_chunks_mut(in_sz)
        .enumerate()
        .map(|(n, dxn)| {
            let dyn_ = &dy[n * d.c_out * p..(n + 1) * d.c_out * p];
            let mut cols = vec![T::zero(); k * p];
            im2col(&x[n * in_sz..(n + 1) * in_sz], &win, &mut cols);
            // dW_n = dy_n · colsᵀ
            let mut dw = vec![T::zero(); d.c_out * k];
            T::gemm(
                d.c_out, p, k, T::one(), dyn_, p as isize, 1, &cols, 1, p as isize, T::zero(),
                &mut dw, k as isize, 1,
            );
            // dcols = Wᵀ · dy_n
            T::gemm(
                k, d.c_out, p, T::one(), weight, 1, k as isize, dyn_, p as isize, 1, T::zero(),
                &mut cols, p as isize, 1,
            );
            col2im(&cols, &win, dxn);
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); d.c_out * k];
    for part in &partial {
        for (a, &b) in dw.iter_mut().zip(part) {
            *a += b;
        }
    }
    let db = bias_grad(dy, d.batch, d.c_out, p);
    (dx, dw, db)
}

fn bias_grad<T: Real>(dy: &[T], batch: usize, c: usize, p: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for n in 0..batch {
        for (co, acc) in db.iter_mut().enumerate() {
            let s: T = dy[(n * c + co) * p..(n * c + co + 1) * p].iter().copied().sum();
            *acc += s;
        }
    }
    db
}

/// Transposed convolution geometry: the input is `batch × c_in × height × width`,
/// the weight is `c_in × c_out × kh × kw`, the output `batch × c_out × out_h × out_w`
/// with `out = (in − 1)·stride + k − 2·pad`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvTDims {
    /// Window over the *output* image whose positions are the input pixels.
    fn window(&self) -> Window {
        Window {
            channels: self.c_out,
            height: self.out_h,
            width: self.out_w,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            mode: PaddingMode::Zero,
            out_h: self.height,
            out_w: self.width,
        }
    }
}

pub fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvTDims,
) -> Vec<T> {
    let win = d.window();
    let (k, p) = (win.rows(), win.positions());
    let in_sz = d.c_in * p;
    let out_plane = d.out_h * d.out_w;
    let mut out = vec![T::zero(); d.batch * d.c_out * out_plane];
    out.par_chunks_mut(d.c_out * out_plane)
        .enumerate()
        .for_each(|(n, o)| {
            let xn = &x[n * in_sz..(n + 1) * in_sz];
            let mut cols = vec![T::zero(); k * p];
            // cols = Wᵀ (k × c_in) · x_n (c_in × p)
            T::gemm(
                k, d.c_in, p, T::one(), weight, 1, k as isize, xn, p as isize, 1, T::zero(),
                &mut cols, p as isize, 1,
            );
            col2im(&cols, &win, o);
            if let Some(b) = bias {
                for (co, plane) in o.chunks_mut(out_plane).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        });
    out
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvTDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let win = d.window();
    let (k, p) = (win.rows(), win.positions());
    let in_sz = d.c_in * p;
    let out_sz = d.c_out * d.out_h * d.out_w;
    let mut dx = vec![T::zero(); x.len()];
    let partial: Vec<Vec<T>> = dx
        .par_chunks_mut(in_sz)
        .enumerate()
        .map(|(n, dxn)| {
            let mut cols = vec![T::zero(); k * p];
            im2col(&dy[n * out_sz..(n + 1) * out_sz], &win, &mut cols);
            // dx_n = W (c_in × k) · cols (k × p)
            matmul_into(d.c_in, k, p, weight, &cols, dxn);
            // dW_n = x_n (c_in × p) · colsᵀ (p × k)
            let mut dw = vec![T::zero(); d.c_in * k];
            T::gemm(
                d.c_in, p, k, T::one(), &x[n * in_sz..(n + 1) * in_sz], p as isize, 1, &cols, 1,
                p as isize, T::zero(), &mut dw, k as isize, 1,
            );
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); d.c_in * k];
    for part in &partial {
        for (a, &b) in dw.iter_mut().zip(part) {
            *a += b;
        }
    }
    let db = bias_grad(dy, d.batch, d.c_out, d.out_h * d.out_w);
    (dx, dw, db)
}
