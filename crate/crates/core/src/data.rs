//! Frame sequences, synthetic ground truth with known motion, the BI and BD
//! degradations, training-patch extraction and PNG frame directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use tcvsr_tensor::{RngState, Tensor};

use crate::error::{Error, Result};

/// Ordered RGB frames (`3×H×W`, values in `[0, 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Tensor>,
    /// Ground-truth global displacement `(dx, dy)` in pixels from frame `t`
    /// to frame `t + 1`, when known.
    pub motion: Option<Vec<(f64, f64)>>,
}

impl Sequence {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        let s = Self { frames, motion: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Data("no frames".into()));
        };
        if first.rank() != 3 || first.dim(0) != 3 {
            return Err(Error::Data(format!("frames must be 3×H×W, got {:?}", first.shape())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(Error::Data(format!(
                    "frame {} has shape {:?}, frame 0 has {:?}",
                    i,
                    f.shape(),
                    first.shape()
                )));
            }
        }
        if let Some(m) = &self.motion {
            if m.len() + 1 != self.frames.len() {
                return Err(Error::Data(format!(
                    "{} motion entries for {} frames",
                    m.len(),
                    self.frames.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].dim(1)
    }

    pub fn width(&self) -> usize {
        self.frames[0].dim(2)
    }

    /// Sub-sequence `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Sequence {
        Sequence {
            frames: self.frames[start..start + len].to_vec(),
            motion: self
                .motion
                .as_ref()
                .map(|m| m[start..start + len.saturating_sub(1)].to_vec()),
        }
    }

    pub fn map_frames(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Sequence> {
        Ok(Sequence {
            frames: self.frames.iter().map(f).collect::<Result<_>>()?,
            motion: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DegradationKind {
    /// MATLAB-style bicubic down-sampling.
    Bicubic,
    /// Gaussian blur then decimation.
    BlurDown { sigma: f64 },
}

impl DegradationKind {
    pub const BD_SIGMA: f64 = 1.6;

    pub fn bd() -> Self {
        DegradationKind::BlurDown { sigma: Self::BD_SIGMA }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" => Ok(DegradationKind::Bicubic),
            "bd" => Ok(Self::bd()),
            other => Err(Error::Usage(format!("unknown degradation kind {other:?} (bi|bd)"))),
        }
    }
}

/// Cubic convolution kernel with `a = −0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        1.5 * ax.powi(3) - 2.5 * ax.powi(2) + 1.0
    } else if ax < 2.0 {
        -0.5 * ax.powi(3) + 2.5 * ax.powi(2) - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Mirror an index into `0..n` the way MATLAB's `imresize` pads
/// (`… 1 0 | 0 1 … n−1 | n−1 n−2 …`).
fn symmetric(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Per-output-index `(source index, weight)` lists for one axis.
pub fn resize_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let (kscale, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let taps = width.ceil() as isize + 2;
            let mut w: Vec<(usize, f64)> = Vec::with_capacity(taps as usize);
            for j in left..left + taps {
                let wt = kscale * cubic(kscale * (u - j as f64));
                if wt != 0.0 {
                    w.push((symmetric(j, in_len), wt));
                }
            }
            let s: f64 = w.iter().map(|&(_, v)| v).sum();
            w.iter_mut().for_each(|(_, v)| *v /= s);
            w
        })
        .collect()
}

/// Separable bicubic resampling (horizontal pass, then vertical), with
/// kernel widening when shrinking. Output is not clamped.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Data(format!("target size {out_h}×{out_w} must be positive")));
    }
    let (c, h, w) = chw(img)?;
    let (wx, wy) = (resize_weights(w, out_w), resize_weights(h, out_h));
    let src = img.data();
    let mut tmp = vec![0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, taps) in wx.iter().enumerate() {
                tmp[(ch * h + y) * out_w + x] = taps.iter().map(|&(j, k)| row[j] as f64 * k).sum();
            }
        }
    }
    let mut out = vec![0f32; c * out_h * out_w];
    for ch in 0..c {
        for (y, taps) in wy.iter().enumerate() {
            for x in 0..out_w {
                let v: f64 = taps
                    .iter()
                    .map(|&(j, k)| tmp[(ch * h + j) * out_w + x] * k)
                    .sum();
                out[(ch * out_h + y) * out_w + x] = v as f32;
            }
        }
    }
    Ok(Tensor::new(&[c, out_h, out_w], out)?)
}

fn chw(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Data(format!("expected C×H×W image, got {:?}", img.shape()))),
    }
}

/// Clamp to `[0, 1]`, returning the image and how many values moved.
pub fn clamp_unit(img: &Tensor) -> (Tensor, usize) {
    let moved = img.data().iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count();
    (img.clamp(0.0, 1.0), moved)
}

/// BI degradation: bicubic down-sampling by `scale`, clamped to `[0, 1]`.
pub fn degrade_bi(img: &Tensor, scale: usize) -> Result<(Tensor, usize)> {
    let (_, h, w) = chw(img)?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::Data(format!("{h}×{w} is not divisible by scale {scale}")));
    }
    Ok(clamp_unit(&bicubic_resize(img, h / scale, w / scale)?))
}

/// Normalized 1-D Gaussian taps; 13 taps for σ = 1.6.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

pub const BD_KERNEL_SIZE: usize = 13;

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    let k = gaussian_kernel(sigma, BD_KERNEL_SIZE);
    let r = (BD_KERNEL_SIZE / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0f64; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                tmp[(ch * h + y) * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| {
                        let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                        src[(ch * h + y) * w + sx] as f64 * kv
                    })
                    .sum();
            }
        }
    }
    let mut out = vec![0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| {
                        let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                        tmp[(ch * h + sy) * w + x] * kv
                    })
                    .sum();
                out[(ch * h + y) * w + x] = v as f32;
            }
        }
    }
    Ok(Tensor::new(&[c, h, w], out)?)
}

/// BD degradation: blur with σ, keep every `scale`-th pixel from index 0.
pub fn degrade_bd(img: &Tensor, sigma: f64, scale: usize) -> Result<(Tensor, usize)> {
    let (c, h, w) = chw(img)?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::Data(format!("{h}×{w} is not divisible by scale {scale}")));
    }
    let blurred = gaussian_blur(img, sigma)?;
    let (oh, ow) = (h / scale, w / scale);
    let b = blurred.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out.push(b[(ch * h + y * scale) * w + x * scale]);
            }
        }
    }
    Ok(clamp_unit(&Tensor::new(&[c, oh, ow], out)?))
}

pub fn degrade(img: &Tensor, kind: DegradationKind, scale: usize) -> Result<Tensor> {
    Ok(match kind {
        DegradationKind::Bicubic => degrade_bi(img, scale)?.0,
        DegradationKind::BlurDown { sigma } => degrade_bd(img, sigma, scale)?.0,
    })
}

pub fn degrade_sequence(seq: &Sequence, kind: DegradationKind, scale: usize) -> Result<Sequence> {
    let mut lr = seq.map_frames(|f| degrade(f, kind, scale))?;
    lr.motion = seq
        .motion
        .as_ref()
        .map(|m| m.iter().map(|&(dx, dy)| (dx / scale as f64, dy / scale as f64)).collect());
    Ok(lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Checkerboard,
    GradientNoise,
    TextLike,
}

impl Pattern {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Pattern::Checkerboard),
            "gradient-noise" => Ok(Pattern::GradientNoise),
            "text-like" => Ok(Pattern::TextLike),
            other => Err(Error::Usage(format!(
                "unknown pattern {other:?} (checkerboard|gradient-noise|text-like)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Checkerboard => "checkerboard",
            Pattern::GradientNoise => "gradient-noise",
            Pattern::TextLike => "text-like",
        }
    }
}

/// Base canvas, `3×h×w`, values in `[0, 1]`.
pub fn render_pattern(pattern: Pattern, h: usize, w: usize, rng: &mut RngState) -> Tensor {
    let mut img = Tensor::zeros(&[3, h, w]);
    match pattern {
        Pattern::Checkerboard => {
            let cell = 8;
            let a: [f64; 3] = [rng.gen_range(0.6..0.95), rng.gen_range(0.6..0.95), rng.gen_range(0.6..0.95)];
            let b: [f64; 3] = [rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4)];
            for y in 0..h {
                for x in 0..w {
                    let on = ((y / cell) + (x / cell)) % 2 == 0;
                    for c in 0..3 {
                        img.set(&[c, y, x], (if on { a[c] } else { b[c] }) as f32);
                    }
                }
            }
        }
        Pattern::GradientNoise => {
            // value noise summed over octaves, lattice interpolated with the
            // cubic kernel
            let octaves = [(32usize, 0.45f64), (16, 0.3), (8, 0.2), (4, 0.12)];
            let mut acc = vec![0f64; 3 * h * w];
            for &(period, amp) in &octaves {
                let (gh, gw) = (h / period + 4, w / period + 4);
                let lattice: Vec<f64> = (0..3 * gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for c in 0..3 {
                    for y in 0..h {
                        let fy = y as f64 / period as f64 + 1.0;
                        let y0 = fy.floor() as isize;
                        for x in 0..w {
                            let fx = x as f64 / period as f64 + 1.0;
                            let x0 = fx.floor() as isize;
                            let mut v = 0.0;
                            for j in (y0 - 1)..=(y0 + 2) {
                                let wy = cubic(fy - j as f64);
                                for i in (x0 - 1)..=(x0 + 2) {
                                    let wx = cubic(fx - i as f64);
                                    v += wy * wx * lattice[(c * gh + j as usize) * gw + i as usize];
                                }
                            }
                            acc[(c * h + y) * w + x] += amp * v;
                        }
                    }
                }
            }
            for (o, v) in img.data_mut().iter_mut().zip(acc) {
                *o = (0.5 + 0.5 * v).clamp(0.0, 1.0) as f32;
            }
        }
        Pattern::TextLike => {
            let bg: f32 = rng.gen_range(0.8..0.95);
            img.data_mut().iter_mut().for_each(|v| *v = bg);
            let (gw, gh, gap) = (5usize, 7usize, 2usize);
            let mut y = gap;
            while y + gh <= h {
                let ink: [f32; 3] = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
                let mut x = gap;
                while x + gw <= w {
                    if rng.gen_bool(0.8) {
                        let bits: u64 = rng.gen();
                        for gy in 0..gh {
                            for gx in 0..gw {
                                if bits >> (gy * gw + gx) & 1 == 1 {
                                    for c in 0..3 {
                                        img.set(&[c, y + gy, x + gx], ink[c]);
                                    }
                                }
                            }
                        }
                    }
                    x += gw + 1;
                }
                y += gh + gap;
            }
        }
    }
    img
}

/// Sample `canvas` at a possibly fractional offset: `out(y, x) =
/// canvas(y + oy, x + ox)`, cubic interpolation, clamped to `[0, 1]`.
fn crop_at(canvas: &Tensor, oy: f64, ox: f64, h: usize, w: usize) -> Tensor {
    let (ch, ch_h, ch_w) = (canvas.dim(0), canvas.dim(1), canvas.dim(2));
    let integral = oy.fract() == 0.0 && ox.fract() == 0.0;
    let mut out = Tensor::zeros(&[ch, h, w]);
    let taps = |o: f64, n: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n)
            .map(|i| {
                let u = i as f64 + o;
                let f = u.floor() as isize;
                if u.fract() == 0.0 {
                    return vec![(f as usize, 1.0)];
                }
                ((f - 1)..=(f + 2))
                    .map(|j| (j.max(0) as usize, cubic(u - j as f64)))
                    .collect()
            })
            .collect()
    };
    if integral {
        for c in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    let v = canvas.at(&[c, y + oy as usize, x + ox as usize]);
                    out.set(&[c, y, x], v);
                }
            }
        }
        return out;
    }
    let (ty, tx) = (taps(oy, h), taps(ox, w));
    let src = canvas.data();
    for c in 0..ch {
        for (y, wy) in ty.iter().enumerate() {
            for (x, wx) in tx.iter().enumerate() {
                let mut v = 0.0;
                for &(sy, ky) in wy {
                    for &(sx, kx) in wx {
                        v += ky * kx * src[(c * ch_h + sy.min(ch_h - 1)) * ch_w + sx.min(ch_w - 1)] as f64;
                    }
                }
                out.set(&[c, y, x], v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// Synthetic sequence: frame `t` is the base pattern translated by the
/// cumulative motion `Σ_{s<t} motion[s]`. Content moving right means
/// `frame_{t+1}(y, x) = frame_t(y, x − dx)`.
pub fn synth_sequence(
    pattern: Pattern,
    motion: &[(f64, f64)],
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Sequence> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Usage(format!(
            "degenerate sequence size: {frames} frames of {height}×{width}"
        )));
    }
    if motion.is_empty() {
        return Err(Error::Usage("motion list is empty".into()));
    }
    let steps: Vec<(f64, f64)> = (0..frames - 1).map(|t| motion[t % motion.len()]).collect();
    let mut cum = vec![(0.0f64, 0.0f64)];
    for &(dx, dy) in &steps {
        let (x, y) = *cum.last().unwrap();
        cum.push((x + dx, y + dy));
    }
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = cum.iter().map(f).fold(0.0, f64::min);
        let hi = cum.iter().map(f).fold(0.0, f64::max);
        (lo, hi)
    };
    let (xlo, xhi) = span(|c| c.0);
    let (ylo, yhi) = span(|c| c.1);
    let pad = 4.0;
    let mx = (xhi - xlo).ceil() + 2.0 * pad;
    let my = (yhi - ylo).ceil() + 2.0 * pad;
    let (canvas_h, canvas_w) = (height + my as usize, width + mx as usize);
    if mx as usize > 4 * width || my as usize > 4 * height {
        return Err(Error::Usage("motion moves content far out of frame".into()));
    }
    let mut rng = RngState::new(seed);
    let canvas = render_pattern(pattern, canvas_h, canvas_w, &mut rng);
    // origin such that every crop offset is non-negative
    let (ox0, oy0) = (pad + xhi, pad + yhi);
    let frames = cum
        .iter()
        .map(|&(cx, cy)| crop_at(&canvas, oy0 - cy, ox0 - cx, height, width))
        .collect();
    let seq = Sequence {
        frames,
        motion: Some(steps),
    };
    seq.validate()?;
    Ok(seq)
}

/// Aligned LR/HR training patches from the same spatial window of every frame.
#[derive(Clone, Debug)]
pub struct PatchPair {
    pub lr: Vec<Tensor>,
    pub hr: Vec<Tensor>,
    /// LR top-left corner `(y, x)`.
    pub origin: (usize, usize),
}

pub fn crop_frames(frames: &[Tensor], y: usize, x: usize, h: usize, w: usize) -> Result<Vec<Tensor>> {
    frames
        .iter()
        .map(|f| Ok(f.narrow(1, y, h)?.narrow(2, x, w)?))
        .collect()
}

/// Crop at an explicit LR corner; the HR window starts at `scale·(y, x)`.
pub fn crop_patch_pair_at(
    hr: &Sequence,
    lr: &Sequence,
    patch_lr: usize,
    scale: usize,
    y: usize,
    x: usize,
) -> Result<PatchPair> {
    if lr.height() * scale != hr.height() || lr.width() * scale != hr.width() {
        return Err(Error::Data(format!(
            "LR {}×{} is not HR {}×{} / {}",
            lr.height(),
            lr.width(),
            hr.height(),
            hr.width(),
            scale
        )));
    }
    if y + patch_lr > lr.height() || x + patch_lr > lr.width() {
        return Err(Error::Data(format!(
            "patch {} at ({}, {}) exceeds {}×{} frame",
            patch_lr,
            y,
            x,
            lr.height(),
            lr.width()
        )));
    }
    Ok(PatchPair {
        lr: crop_frames(&lr.frames, y, x, patch_lr, patch_lr)?,
        hr: crop_frames(&hr.frames, y * scale, x * scale, patch_lr * scale, patch_lr * scale)?,
        origin: (y, x),
    })
}

/// Random aligned crop, identical across frames.
pub fn crop_patch_pairs(
    hr: &Sequence,
    lr: &Sequence,
    patch_lr: usize,
    scale: usize,
    rng: &mut RngState,
) -> Result<PatchPair> {
    if patch_lr > lr.height() || patch_lr > lr.width() {
        return Err(Error::Data(format!(
            "patch {} exceeds {}×{} frame",
            patch_lr,
            lr.height(),
            lr.width()
        )));
    }
    let y = rng.gen_range(0..=lr.height() - patch_lr);
    let x = rng.gen_range(0..=lr.width() - patch_lr);
    crop_patch_pair_at(hr, lr, patch_lr, scale, y, x)
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

pub fn to_rgb8(frame: &Tensor) -> Result<image::RgbImage> {
    let (c, h, w) = chw(frame)?;
    if c != 3 {
        return Err(Error::Data(format!("expected 3 channels, got {c}")));
    }
    let d = frame.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ch| (d[(ch * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

pub fn from_rgb8(img: &image::RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = p.0[ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data).expect("rgb buffer size")
}

pub fn save_png(frame: &Tensor, path: &Path) -> Result<()> {
    to_rgb8(frame)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// PNG files of a directory in numeric order of the digits in their names.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(u64, String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
            (digits.parse().unwrap_or(u64::MAX), name, p)
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|(_, _, p)| p).collect())
}

pub fn load_frames(dir: &Path) -> Result<Sequence> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    let frames = files.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?;
    let mut seq = Sequence { frames, motion: None };
    seq.validate()?;
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.exists() {
        let m = read_manifest(&manifest)?;
        if m.motion.len() + 1 == seq.len() {
            seq.motion = Some(m.motion);
        }
    }
    Ok(seq)
}

pub const MANIFEST_NAME: &str = "sequence.txt";

/// Writes `frame_%05d.png` files plus a `sequence.txt` manifest.
pub fn save_frames(seq: &Sequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (i, f) in seq.frames.iter().enumerate() {
        save_png(f, &dir.join(frame_name(i)))?;
    }
    write_manifest(seq, &dir.join(MANIFEST_NAME))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub frames: Vec<String>,
    pub motion: Vec<(f64, f64)>,
}

/// Text manifest: one `frame <file>` line per frame, then one
/// `motion <t> <dx> <dy>` line per known frame-pair displacement.
pub fn write_manifest(seq: &Sequence, path: &Path) -> Result<()> {
    let mut s = String::from("# tcvsr sequence manifest\n");
    let _ = writeln!(s, "size {} {}", seq.height(), seq.width());
    for i in 0..seq.len() {
        let _ = writeln!(s, "frame {}", frame_name(i));
    }
    if let Some(m) = &seq.motion {
        for (t, (dx, dy)) in m.iter().enumerate() {
            let _ = writeln!(s, "motion {t} {dx} {dy}");
        }
    }
    fs::write(path, s).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut m = Manifest::default();
    for (ln, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            [c, ..] if c.starts_with('#') => {}
            ["size", ..] => {}
            ["frame", f] => m.frames.push(f.to_string()),
            ["motion", _, dx, dy] => {
                let p = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data(format!("{}:{}: bad number {s:?}", path.display(), ln + 1)))
                };
                m.motion.push((p(dx)?, p(dy)?));
            }
            _ => return Err(Error::Data(format!("{}:{}: unrecognised line", path.display(), ln + 1))),
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_padding_matches_matlab() {
        let idx: Vec<usize> = (-3..7).map(|i| symmetric(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn resize_weights_rows_sum_to_one() {
        for (a, b) in [(16, 4), (7, 13), (64, 64), (5, 20)] {
            for row in resize_weights(a, b) {
                let s: f64 = row.iter().map(|r| r.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_resize() {
        let mut rng = RngState::new(3);
        let img = Tensor::uniform(&[3, 9, 11], 0.0, 1.0, &mut rng);
        let out = bicubic_resize(&img, 9, 11).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(&[3, 24, 20], 0.37f32);
        for (h, w) in [(6, 5), (48, 40), (17, 9)] {
            let out = bicubic_resize(&img, h, w).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
        let (bd, _) = degrade_bd(&img, 1.6, 4).unwrap();
        assert!(bd.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn bd_kernel_normalised() {
        let k = gaussian_kernel(1.6, BD_KERNEL_SIZE);
        assert_eq!(k.len(), 13);
        let s2: f64 = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).sum();
        assert!((s2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bd_impulse_peak() {
        let mut img = Tensor::zeros(&[3, 32, 32]);
        for c in 0..3 {
            img.set(&[c, 16, 16], 1.0);
        }
        let blurred = gaussian_blur(&img, 1.6).unwrap();
        // closed form: normalised 13-tap Gaussian, centre tap squared
        let norm: f64 = (-6..=6).map(|d: i32| (-(d * d) as f64 / (2.0 * 1.6 * 1.6)).exp()).sum();
        let peak = 1.0 / (norm * norm);
        assert!((blurred.at(&[0, 16, 16]) as f64 - peak).abs() < 1e-6);
        // the decimated output keeps the centre sample at (4, 4)
        let (lr, _) = degrade_bd(&img, 1.6, 4).unwrap();
        assert!((lr.at(&[1, 4, 4]) as f64 - peak).abs() < 1e-6);
    }

    #[test]
    fn bd_rejects_indivisible() {
        assert!(degrade_bd(&Tensor::zeros(&[3, 10, 12]), 1.6, 4).is_err());
        assert!(degrade_bi(&Tensor::zeros(&[3, 12, 10]), 4).is_err());
    }

    #[test]
    fn synth_static_and_integer_motion() {
        let s = synth_sequence(Pattern::GradientNoise, &[(0.0, 0.0)], 4, 24, 24, 5).unwrap();
        assert!(s.frames.windows(2).all(|w| w[0] == w[1]));

        let s = synth_sequence(Pattern::TextLike, &[(3.0, 0.0)], 3, 20, 30, 6).unwrap();
        for t in 0..2 {
            for c in 0..3 {
                for y in 0..20 {
                    for x in 3..30 {
                        assert_eq!(s.frames[t + 1].at(&[c, y, x]), s.frames[t].at(&[c, y, x - 3]));
                    }
                }
            }
        }
        assert_eq!(s.motion.as_ref().unwrap(), &vec![(3.0, 0.0); 2]);
    }

    #[test]
    fn synth_is_deterministic() {
        for p in [Pattern::Checkerboard, Pattern::GradientNoise, Pattern::TextLike] {
            let a = synth_sequence(p, &[(1.5, -0.5)], 3, 16, 16, 42).unwrap();
            let b = synth_sequence(p, &[(1.5, -0.5)], 3, 16, 16, 42).unwrap();
            assert_eq!(a, b);
            assert!(a.frames.iter().all(|f| f.min() >= 0.0 && f.max() <= 1.0));
        }
        assert!(synth_sequence(Pattern::Checkerboard, &[(0.0, 0.0)], 0, 16, 16, 1).is_err());
    }

    #[test]
    fn crop_alignment() {
        let hr = synth_sequence(Pattern::GradientNoise, &[(1.0, 0.0)], 2, 64, 64, 1).unwrap();
        let lr = degrade_sequence(&hr, DegradationKind::Bicubic, 4).unwrap();
        let p = crop_patch_pair_at(&hr, &lr, 8, 4, 0, 0).unwrap();
        assert_eq!(p.lr[0].shape(), &[3, 8, 8]);
        assert_eq!(p.hr[0].shape(), &[3, 32, 32]);
        assert_eq!(p.hr[1], hr.frames[1].narrow(1, 0, 32).unwrap().narrow(2, 0, 32).unwrap());
        assert!(crop_patch_pair_at(&hr, &lr, 8, 4, 9, 0).is_err());
        let mut r1 = RngState::new(9);
        let mut r2 = RngState::new(9);
        let a = crop_patch_pairs(&hr, &lr, 8, 4, &mut r1).unwrap();
        let b = crop_patch_pairs(&hr, &lr, 8, 4, &mut r2).unwrap();
        assert_eq!(a.origin, b.origin);
        let (y, x) = a.origin;
        assert_eq!(a.hr[0], hr.frames[0].narrow(1, 4 * y, 32).unwrap().narrow(2, 4 * x, 32).unwrap());
    }
}
