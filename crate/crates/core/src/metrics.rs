//! Quality metrics and temporal-consistency diagnostics.

use std::path::Path;

use tcvsr_tensor::{Real, Tensor};

use crate::data::Sequence;
use crate::error::{io_err, Error, Result};

/// Reported when the two images are identical (MSE = 0).
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn fv<T: Real>(v: T) -> f64 {
    <T as Real>::to_f64(v)
}

fn same_shape<T: Real>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `mean(sqrt((a − b)² + ε²))`, accumulated in `f64`.
pub fn charbonnier<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>, eps: f64) -> Result<f64> {
    same_shape("charbonnier", sr, hr)?;
    // sqrt(r² + ε²) = ε + r²/(sqrt(r² + ε²) + ε), exact at r = 0
    let s: f64 = sr
        .data()
        .iter()
        .zip(hr.data())
        .map(|(&a, &b)| {
            let r2 = (fv(a) - fv(b)).powi(2);
            r2 / ((r2 + eps * eps).sqrt() + eps)
        })
        .sum();
    Ok(eps + s / sr.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// MSE was exactly zero; `db` holds [`PSNR_CAP`].
    pub identical: bool,
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (fv(x) - fv(y)).powi(2))
        .sum();
    Ok(s / a.len().max(1) as f64)
}

/// `10·log10(peak² / MSE)`, capped for identical inputs.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Psnr> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Psnr { db: PSNR_CAP, identical: true });
    }
    Ok(Psnr {
        db: (10.0 * (peak * peak / m).log10()).min(PSNR_CAP),
        identical: false,
    })
}

fn gaussian_window() -> Vec<f64> {
    crate::data::gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)
}

/// Valid-region separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|i| k[i] * tmp[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Single-channel SSIM (`H×W` or `1×H×W`), dynamic range 1, mean over all
/// valid 11×11 windows.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = match *a.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("ssim expects one channel, got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim: {h}×{w} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        )));
    }
    let k = gaussian_window();
    let av: Vec<f64> = a.data().iter().map(|v| fv(*v)).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| fv(*v)).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&av, h, w, &k);
    let mu_b = filter_valid(&bv, h, w, &k);
    let e_aa = filter_valid(&prod(&av, &av), h, w, &k);
    let e_bb = filter_valid(&prod(&bv, &bv), h, w, &k);
    let e_ab = filter_valid(&prod(&av, &bv), h, w, &k);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// BT.601 studio-swing luma: `(65.481 R + 128.553 G + 24.966 B + 16) / 255`.
pub fn rgb_to_y<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("rgb_to_y expects 3×H×W, got {s:?}"))),
    };
    let d = img.data();
    let plane = h * w;
    let y = (0..plane)
        .map(|i| {
            let (r, g, b) = (fv(d[i]), fv(d[plane + i]), fv(d[2 * plane + i]));
            T::lit((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)
        })
        .collect();
    Ok(Tensor::new(&[1, h, w], y)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    Rgb,
    Y,
}

impl ChannelMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Self::Rgb),
            "y" => Ok(Self::Y),
            other => Err(Error::Usage(format!("unknown channel mode {other:?} (rgb|y)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rgb => "rgb",
            Self::Y => "y",
        }
    }
}

/// PSNR and SSIM of one RGB frame pair: values are clamped to `[0, 1]`,
/// converted per `mode`, then scored. RGB SSIM averages the channels.
pub fn frame_scores(sr: &Tensor, hr: &Tensor, mode: ChannelMode) -> Result<(Psnr, f64)> {
    same_shape("frame_scores", sr, hr)?;
    let (a, b) = (sr.clamp(0.0, 1.0), hr.clamp(0.0, 1.0));
    match mode {
        ChannelMode::Y => {
            let (ya, yb) = (rgb_to_y(&a)?, rgb_to_y(&b)?);
            Ok((psnr(&ya, &yb, 1.0)?, ssim(&ya, &yb)?))
        }
        ChannelMode::Rgb => {
            let mut s = 0.0;
            for c in 0..a.dim(0) {
                s += ssim(&a.narrow(0, c, 1)?, &b.narrow(0, c, 1)?)?;
            }
            Ok((psnr(&a, &b, 1.0)?, s / a.dim(0) as f64))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetric {
    pub frame_idx: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub identical: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mode: ChannelMode,
    pub rows: Vec<FrameMetric>,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    /// Population standard deviation of the per-frame PSNR.
    pub fn psnr_std(&self) -> f64 {
        let m = self.mean_psnr();
        mean(self.rows.iter().map(|r| (r.psnr_db - m).powi(2))).sqrt()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["frame_idx", "psnr_db", "ssim"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.frame_idx.to_string(), r.psnr_db.to_string(), r.ssim.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    pub fn from_csv(text: &str, mode: ChannelMode) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["frame_idx", "psnr_db", "ssim"] {
            return Err(Error::Data(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Data(format!("bad number {:?} in CSV", field(i))))
            };
            let psnr_db = num(1)?;
            rows.push(FrameMetric {
                frame_idx: field(0)
                    .parse()
                    .map_err(|_| Error::Data(format!("bad frame index {:?}", field(0))))?,
                psnr_db,
                ssim: num(2)?,
                identical: psnr_db >= PSNR_CAP,
            });
        }
        Ok(Self { mode, rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| io_err(path, e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-frame PSNR/SSIM of `sr` against `hr`.
pub fn per_frame_psnr_curve(sr: &Sequence, hr: &Sequence, mode: ChannelMode) -> Result<MetricReport> {
    if sr.len() != hr.len() {
        return Err(Error::Data(format!("{} SR frames vs {} ground-truth frames", sr.len(), hr.len())));
    }
    let rows = sr
        .frames
        .iter()
        .zip(&hr.frames)
        .enumerate()
        .map(|(i, (a, b))| {
            let (p, s) = frame_scores(a, b, mode)?;
            Ok(FrameMetric {
                frame_idx: i,
                psnr_db: p.db,
                ssim: s,
                identical: p.identical,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { mode, rows })
}

/// Row `row` of every frame stacked top to bottom: `3×T×W`.
pub fn temporal_profile(seq: &Sequence, row: usize) -> Result<Tensor> {
    if row >= seq.height() {
        return Err(Error::Usage(format!("row {row} outside frame height {}", seq.height())));
    }
    let (t, w) = (seq.len(), seq.width());
    let mut out = Tensor::zeros(&[3, t, w]);
    for (i, f) in seq.frames.iter().enumerate() {
        for c in 0..3 {
            for x in 0..w {
                out.set(&[c, i, x], f.at(&[c, row, x]));
            }
        }
    }
    Ok(out)
}

/// Mean horizontal displacement per profile row, from the peak of the
/// normalised cross-correlation between consecutive rows (sub-pixel by a
/// parabola through the peak). Positive means content moving right.
pub fn profile_slope(profile: &Tensor, max_shift: usize) -> Result<f64> {
    let (t, w) = match *profile.shape() {
        [3, t, w] | [1, t, w] => (t, w),
        ref s => return Err(Error::Shape(format!("profile must be C×T×W, got {s:?}"))),
    };
    if t < 2 || w <= 2 * max_shift + 2 {
        return Err(Error::Shape(format!("profile {t}×{w} too small for shift search ±{max_shift}")));
    }
    let luma = |r: usize| -> Vec<f64> {
        let c = profile.dim(0);
        (0..w)
            .map(|x| (0..c).map(|ch| profile.at(&[ch, r, x]) as f64).sum::<f64>() / c as f64)
            .collect()
    };
    let ncc = |a: &[f64], b: &[f64], s: isize| -> f64 {
        // compare a(x) with b(x + s) on the overlap
        let lo = s.min(0).unsigned_abs();
        let hi = w - s.max(0) as usize;
        let xs: Vec<(f64, f64)> = (lo..hi).map(|x| (a[x], b[(x as isize + s) as usize])).collect();
        let n = xs.len() as f64;
        let (ma, mb) = xs.iter().fold((0.0, 0.0), |(p, q), (x, y)| (p + x / n, q + y / n));
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for (x, y) in &xs {
            num += (x - ma) * (y - mb);
            da += (x - ma).powi(2);
            db += (y - mb).powi(2);
        }
        num / (da * db).sqrt().max(1e-12)
    };
    let mut total = 0.0;
    for r in 0..t - 1 {
        let (a, b) = (luma(r), luma(r + 1));
        let m = max_shift as isize;
        let scores: Vec<f64> = (-m..=m).map(|s| ncc(&a, &b, s)).collect();
        let best = scores
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap();
        let mut shift = best as f64 - m as f64;
        if best > 0 && best + 1 < scores.len() {
            let (l, c, rr) = (scores[best - 1], scores[best], scores[best + 1]);
            let den = l - 2.0 * c + rr;
            if den.abs() > 1e-12 {
                shift += 0.5 * (l - rr) / den;
            }
        }
        total += shift;
    }
    Ok(total / (t - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcvsr_tensor::RngState;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::<f64>::full(&[3, 8, 8], 0.5);
        let b = Tensor::<f64>::full(&[3, 8, 8], 0.5 + 16.0 / 255.0);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p.db - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-9);
        assert!((p.db - 24.05).abs() < 0.01);
        let z = Tensor::<f64>::zeros(&[3, 4, 4]);
        let o = Tensor::<f64>::ones(&[3, 4, 4]);
        assert!(psnr(&z, &o, 1.0).unwrap().db.abs() < 1e-12);
        let same = psnr(&a, &a, 1.0).unwrap();
        assert!(same.identical && same.db == PSNR_CAP);
    }

    #[test]
    fn ssim_identical_and_constant_closed_form() {
        let mut rng = RngState::new(1);
        let a = Tensor::<f32>::uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        let (c0, c1) = (0.4f64, 0.5f64);
        let x = Tensor::<f64>::full(&[16, 16], c0);
        let y = Tensor::<f64>::full(&[16, 16], c1);
        let k1 = (0.01f64).powi(2);
        let expect = (2.0 * c0 * c1 + k1) / (c0 * c0 + c1 * c1 + k1);
        assert!((ssim(&x, &y).unwrap() - expect).abs() < 1e-12);
        assert!(ssim(&Tensor::<f64>::zeros(&[8, 8]), &Tensor::<f64>::zeros(&[8, 8])).is_err());
    }

    #[test]
    fn luma_goldens() {
        let white = rgb_to_y(&Tensor::<f64>::ones(&[3, 1, 1])).unwrap();
        assert!((white.data()[0] - 235.0 / 255.0).abs() < 1e-9);
        let black = rgb_to_y(&Tensor::<f64>::zeros(&[3, 1, 1])).unwrap();
        assert!((black.data()[0] - 16.0 / 255.0).abs() < 1e-12);
        assert!(rgb_to_y(&Tensor::<f64>::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn charbonnier_goldens() {
        let a = Tensor::<f64>::full(&[10], 0.25);
        assert_eq!(charbonnier(&a, &a, 1e-3).unwrap(), 1e-3);
        let b = a.map(|v| v + 1.0);
        assert!((charbonnier(&a, &b, 1e-3).unwrap() - (1.0f64 + 1e-6).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rep = MetricReport {
            mode: ChannelMode::Y,
            rows: vec![
                FrameMetric { frame_idx: 0, psnr_db: 31.234567891234, ssim: 0.912345678901, identical: false },
                FrameMetric { frame_idx: 1, psnr_db: PSNR_CAP, ssim: 1.0, identical: true },
            ],
        };
        let text = rep.to_csv().unwrap();
        assert!(text.starts_with("frame_idx,psnr_db,ssim\n") && text.ends_with('\n'));
        assert_eq!(MetricReport::from_csv(&text, ChannelMode::Y).unwrap(), rep);
    }
}
