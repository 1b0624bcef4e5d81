//! Training loop: clip sampling, flow pretraining, two-group ADAM with
//! cosine annealing, checkpoints that resume bit-exactly, and the run
//! manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use tcvsr_tensor::{
    cosine_lr, io as tio, AdamConfig, AdamState, Binding, Graph, ParamGroup, RngState, Tensor, Var,
};

use crate::config::{format_kv, read_kv, ModelConfig, TrainConfig};
use crate::data::{crop_patch_pairs, degrade, degrade_sequence, render_pattern, DegradationKind, Pattern, Sequence};
use crate::error::{io_err, Error, Result};
use crate::model::TcNet;

/// Stream offsets so pretraining and main iterations never share draws.
const MAIN_STREAM: u64 = 0;
const FLOW_STREAM: u64 = 1 << 40;
const BANK_STREAM: u64 = 1 << 41;

pub const TRAIN_STATE_FILE: &str = "train.txt";
pub const ADAM_FILE: &str = "adam.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const FLOW_LOSS_FILE: &str = "flow_loss.csv";
pub const RUN_FILE: &str = "run.txt";

/// Paired HR/LR training sequences.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub hr: Vec<Sequence>,
    pub lr: Vec<Sequence>,
    pub scale: usize,
}

impl TrainData {
    pub fn new(hr: Vec<Sequence>, lr: Vec<Sequence>, scale: usize) -> Result<Self> {
        if hr.is_empty() || hr.len() != lr.len() {
            return Err(Error::Data(format!("{} HR vs {} LR sequences", hr.len(), lr.len())));
        }
        for (h, l) in hr.iter().zip(&lr) {
            h.validate()?;
            l.validate()?;
            if h.len() != l.len() || l.height() * scale != h.height() || l.width() * scale != h.width() {
                return Err(Error::Data(format!(
                    "HR {}×{}×{} does not match LR {}×{}×{} at ×{scale}",
                    h.len(),
                    h.height(),
                    h.width(),
                    l.len(),
                    l.height(),
                    l.width()
                )));
            }
        }
        Ok(Self { hr, lr, scale })
    }

    /// Degrade HR sequences on the fly.
    pub fn from_hr(hr: Vec<Sequence>, kind: DegradationKind, scale: usize) -> Result<Self> {
        let lr = hr
            .iter()
            .map(|s| degrade_sequence(s, kind, scale))
            .collect::<Result<Vec<_>>>()?;
        Self::new(hr, lr, scale)
    }

    fn check(&self, cfg: &TrainConfig) -> Result<()> {
        if let Some(s) = self
            .lr
            .iter()
            .find(|s| s.len() < cfg.clip_len || s.height() < cfg.patch_lr || s.width() < cfg.patch_lr)
        {
            return Err(Error::Data(format!(
                "sequence of {} frames at {}×{} cannot hold a {}-frame clip of {} px patches",
                s.len(),
                s.height(),
                s.width(),
                cfg.clip_len,
                cfg.patch_lr
            )));
        }
        Ok(())
    }
}

/// A batch in the frame-major layout the network consumes.
#[derive(Clone, Debug)]
pub struct Batch {
    /// One `B×3×p×p` tensor per frame.
    pub lr: Vec<Tensor>,
    /// `(T·B)×3×sp×sp`, frame `t` sample `b` at row `t·B + b`.
    pub hr: Tensor,
}

fn add_batch_dim(t: &Tensor) -> Result<Tensor> {
    Ok(t.clone().reshape(&[1, t.dim(0), t.dim(1), t.dim(2)])?)
}

/// Draw `batch` random clips of `clip_len` frames with one aligned crop each.
pub fn sample_batch(data: &TrainData, cfg: &TrainConfig, rng: &mut RngState) -> Result<Batch> {
    data.check(cfg)?;
    let mut lr_clips = Vec::with_capacity(cfg.batch);
    let mut hr_clips = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let k = rng.gen_range(0..data.lr.len());
        let start = rng.gen_range(0..=data.lr[k].len() - cfg.clip_len);
        let hr = data.hr[k].slice(start, cfg.clip_len);
        let lr = data.lr[k].slice(start, cfg.clip_len);
        let pair = crop_patch_pairs(&hr, &lr, cfg.patch_lr, data.scale, rng)?;
        lr_clips.push(pair.lr);
        hr_clips.push(pair.hr);
    }
    let stack = |clips: &[Vec<Tensor>], t: usize| -> Result<Vec<Tensor>> {
        clips.iter().map(|c| add_batch_dim(&c[t])).collect()
    };
    let mut lr = Vec::with_capacity(cfg.clip_len);
    let mut hr_rows = Vec::with_capacity(cfg.clip_len * cfg.batch);
    for t in 0..cfg.clip_len {
        let parts = stack(&lr_clips, t)?;
        lr.push(Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)?);
        hr_rows.extend(stack(&hr_clips, t)?);
    }
    let hr = Tensor::concat(&hr_rows.iter().collect::<Vec<_>>(), 0)?;
    Ok(Batch { lr, hr })
}

/// One logged iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub loss: f64,
    pub lr_main: f64,
    /// 0 while the flow group is frozen.
    pub lr_flow: f64,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut kv = BTreeMap::new();
        self.model.to_kv(&mut kv);
        self.train.to_kv(&mut kv);
        let mut s = format!("# tcvsr {}\nrun.seed={}\n", self.version, self.seed);
        s.push_str(&format_kv(&kv));
        for (i, p) in self.outputs.iter().enumerate() {
            let _ = writeln!(s, "run.output{i}={}", p.display());
        }
        s
    }
}

pub fn code_version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Trainer state. `step` counts completed main iterations.
pub struct Trainer {
    pub model: TcNet,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
    pub flow_steps: u64,
    pub log: Vec<LossRecord>,
    pub flow_log: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(model: TcNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let m = config.patch_lr % model.config().spatial_multiple();
        if m != 0 {
            return Err(Error::Config(format!(
                "patch_lr {} must be a multiple of {}",
                config.patch_lr,
                model.config().spatial_multiple()
            )));
        }
        let adam = AdamState::new(&model.store, adam_config(&config));
        Ok(Self {
            model,
            config,
            adam,
            step: 0,
            flow_steps: 0,
            log: Vec::new(),
            flow_log: Vec::new(),
        })
    }

    /// Learning rates at iteration `iter`; `None` freezes the group.
    pub fn rates(&self, iter: u64) -> Result<(f64, Option<f64>)> {
        let c = &self.config;
        let main = cosine_lr(iter, c.total_iters, c.lr_main, c.lr_min)?;
        let flow = if iter < c.freeze_flow_iters {
            None
        } else {
            Some(cosine_lr(iter, c.total_iters, c.lr_flow, c.lr_min.min(c.lr_flow))?)
        };
        Ok((main, flow))
    }

    /// Per-clip Charbonnier loss of the current weights, without updating.
    pub fn loss_on(&self, batch: &Batch) -> Result<f64> {
        let g = Graph::inference();
        let p = Binding::new(&g, &self.model.store);
        let frames: Vec<Var> = batch.lr.iter().map(|f| g.constant(f.clone())).collect();
        let trace = self.model.net.forward(&p, &frames)?;
        let loss = g.charbonnier(&trace.sr, &g.constant(batch.hr.clone()), self.config.charbonnier_eps)?;
        Ok(loss.value().item() as f64)
    }

    /// One main iteration; returns the loss before the update.
    pub fn train_step(&mut self, data: &TrainData) -> Result<LossRecord> {
        let iter = self.step;
        if iter >= self.config.total_iters {
            return Err(Error::Usage(format!("training already finished at step {iter}")));
        }
        let mut rng = RngState::new(self.config.seed).fork(MAIN_STREAM + iter);
        let batch = sample_batch(data, &self.config, &mut rng)?;
        let (lr_main, lr_flow) = self.rates(iter)?;

        let g = Graph::new();
        let p = Binding::new(&g, &self.model.store);
        if lr_flow.is_none() {
            // frozen flow weights enter as constants so no gradient flows there
            for (id, prm) in self.model.store.iter() {
                if prm.group == ParamGroup::Flow {
                    p.bind(id, g.constant(prm.value.clone()))?;
                }
            }
        }
        let frames: Vec<Var> = batch.lr.iter().map(|f| g.constant(f.clone())).collect();
        let trace = self.model.net.forward(&p, &frames)?;
        let loss = g.charbonnier(&trace.sr, &g.constant(batch.hr), self.config.charbonnier_eps)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(Error::Diverged {
                iter,
                detail: format!("loss is {value}"),
            });
        }
        let grads = p.gradients(&g.backward(&loss)?);
        if let Some((id, _)) = grads.iter().enumerate().find(|(_, t)| !t.all_finite()) {
            return Err(Error::Diverged {
                iter,
                detail: format!("non-finite gradient for {}", self.model.store.iter().nth(id).unwrap().1.name),
            });
        }
        self.adam.step(&mut self.model.store, &grads, |group| match group {
            ParamGroup::Main => Some(lr_main),
            ParamGroup::Flow => lr_flow,
        })?;
        self.step += 1;
        let rec = LossRecord {
            iter,
            loss: value,
            lr_main,
            lr_flow: lr_flow.unwrap_or(0.0),
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// One supervised flow step on a known shift: two crops of the same
    /// canvas offset by an integer `(sx, sy)` have constant flow `(sx, sy)`.
    pub fn flow_pretrain_step(&mut self, bank: &FlowBank, opt: &mut AdamState) -> Result<LossRecord> {
        let iter = self.flow_steps;
        let mut rng = RngState::new(self.config.seed).fork(FLOW_STREAM + iter);
        let (pair_ref, pair_src) = sample_shift_pairs(bank, &self.config, &mut rng)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.model.store);
        let r = g.constant(pair_ref);
        let s = g.constant(pair_src.0);
        let flow = self.model.net.flow.estimate(&p, &r, &s)?;
        let target = g.constant(pair_src.1);
        let loss = g.charbonnier(&flow, &target, self.config.charbonnier_eps)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(Error::Diverged {
                iter,
                detail: format!("flow pretraining loss is {value}"),
            });
        }
        let grads = p.gradients(&g.backward(&loss)?);
        let total = self.config.flow_pretrain_iters.max(1);
        let lr = cosine_lr(iter.min(total), total, self.config.lr_flow_pretrain, self.config.lr_flow)?;
        opt.step(&mut self.model.store, &grads, |group| (group == ParamGroup::Flow).then_some(lr))?;
        self.flow_steps += 1;
        let rec = LossRecord {
            iter,
            loss: value,
            lr_main: 0.0,
            lr_flow: lr,
        };
        self.flow_log.push(rec.clone());
        Ok(rec)
    }

    /// Finish flow pretraining (if configured) and the main loop from the
    /// current step. `on_log` sees every record, flagged when it belongs to
    /// flow pretraining.
    pub fn run(&mut self, data: &TrainData, on_log: impl FnMut(&LossRecord, bool)) -> Result<()> {
        self.run_until(data, self.config.total_iters, on_log)
    }

    /// As [`Trainer::run`] but stop after main step `stop`. Pretraining
    /// always completes first, so checkpoints never hold half of it.
    pub fn run_until(&mut self, data: &TrainData, stop: u64, mut on_log: impl FnMut(&LossRecord, bool)) -> Result<()> {
        data.check(&self.config)?;
        if self.flow_steps < self.config.flow_pretrain_iters {
            // pretraining uses its own moments; the main optimiser starts clean
            let mut opt = AdamState::new(&self.model.store, adam_config(&self.config));
            let bank = FlowBank::synth(self.config.seed, self.config.patch_lr, self.model.config().scale)?;
            while self.flow_steps < self.config.flow_pretrain_iters {
                let rec = self.flow_pretrain_step(&bank, &mut opt)?;
                on_log(&rec, true);
            }
        }
        while self.step < stop.min(self.config.total_iters) {
            let rec = self.train_step(data)?;
            on_log(&rec, false);
        }
        Ok(())
    }

    /// Model weights, optimiser moments, step counters and loss logs.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        let mut kv = BTreeMap::new();
        self.config.to_kv(&mut kv);
        kv.insert("state.step".into(), self.step.to_string());
        kv.insert("state.flow_steps".into(), self.flow_steps.to_string());
        write(&dir.join(TRAIN_STATE_FILE), &format_kv(&kv))?;
        let mut text = String::new();
        for (i, (_, prm)) in self.model.store.iter().enumerate() {
            let _ = writeln!(text, "{} {}", prm.name, self.adam.steps[i]);
            tio::save(dir.join(format!("adam_m.{}.tct", prm.name)), &self.adam.m[i])?;
            tio::save(dir.join(format!("adam_v.{}.tct", prm.name)), &self.adam.v[i])?;
        }
        write(&dir.join(ADAM_FILE), &text)?;
        write(&dir.join(LOSS_FILE), &loss_csv(&self.log)?)?;
        write(&dir.join(FLOW_LOSS_FILE), &loss_csv(&self.flow_log)?)
    }

    /// Resume from [`Trainer::save`]. `overrides` are applied on top of the
    /// stored training config (e.g. a larger `total_iters`).
    pub fn load(dir: &Path, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let model = TcNet::load(dir)?;
        let kv = read_kv(&dir.join(TRAIN_STATE_FILE))?;
        let mut config = TrainConfig::default();
        config.apply(&kv)?;
        config.apply(overrides)?;
        let state = |k: &str| -> Result<u64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("{TRAIN_STATE_FILE}: missing {k}")))
        };
        let mut t = Self::new(model, config)?;
        t.step = state("state.step")?;
        t.flow_steps = state("state.flow_steps")?;
        if t.step > t.config.total_iters {
            return Err(Error::Config(format!(
                "checkpoint is at step {} but total_iters is {}",
                t.step, t.config.total_iters
            )));
        }
        let path = dir.join(ADAM_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != t.model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{ADAM_FILE} lists {} parameters, model has {}",
                lines.len(),
                t.model.store.len()
            )));
        }
        let names: Vec<String> = t.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (i, (line, name)) in lines.iter().zip(&names).enumerate() {
            let (n, s) = line
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad {ADAM_FILE} line {line:?}")))?;
            if n != name {
                return Err(Error::Checkpoint(format!("{ADAM_FILE}: expected {name}, found {n}")));
            }
            t.adam.steps[i] = s
                .trim()
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad step count in {line:?}")))?;
            let m: Tensor = tio::load(dir.join(format!("adam_m.{name}.tct")))?;
            let v: Tensor = tio::load(dir.join(format!("adam_v.{name}.tct")))?;
            if m.shape() != t.adam.m[i].shape() || v.shape() != t.adam.v[i].shape() {
                return Err(Error::Checkpoint(format!("{name}: optimiser moment shape mismatch")));
            }
            t.adam.m[i] = m;
            t.adam.v[i] = v;
        }
        t.log = read_loss_csv(&dir.join(LOSS_FILE))?;
        t.flow_log = read_loss_csv(&dir.join(FLOW_LOSS_FILE))?;
        Ok(t)
    }

    pub fn manifest(&self, outputs: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            model: self.model.config().clone(),
            train: self.config.clone(),
            seed: self.config.seed,
            version: code_version(),
            outputs,
        }
    }
}

fn adam_config(c: &TrainConfig) -> AdamConfig {
    AdamConfig {
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.eps_opt,
    }
}

/// Synthetic LR canvases for flow pretraining, in place of a generic
/// optical-flow set. The training clips themselves are a poor source: a
/// translating clip is one image seen many times and the net memorises it,
/// and periodic patterns make the shift ambiguous.
#[derive(Clone, Debug)]
pub struct FlowBank {
    pub canvases: Vec<Tensor>,
}

pub const FLOW_BANK_SIZE: usize = 64;

impl FlowBank {
    /// Gradient-noise and text-like canvases, bicubic-degraded by `scale`.
    pub fn synth(seed: u64, patch_lr: usize, scale: usize) -> Result<Self> {
        let side = (patch_lr + 2 * MAX_PRETRAIN_SHIFT as usize).max(48);
        let canvases = (0..FLOW_BANK_SIZE)
            .map(|i| {
                let mut rng = RngState::new(seed).fork(BANK_STREAM + i as u64);
                let pattern = if i % 2 == 0 { Pattern::GradientNoise } else { Pattern::TextLike };
                degrade(&render_pattern(pattern, side * scale, side * scale, &mut rng), DegradationKind::Bicubic, scale)
            })
            .collect::<Result<_>>()?;
        Ok(Self { canvases })
    }
}

/// Largest integer shift drawn for flow pretraining, in LR pixels.
pub const MAX_PRETRAIN_SHIFT: i64 = 3;

/// Returns `(ref, (src, flow_target))`, each batched along axis 0.
fn sample_shift_pairs(bank: &FlowBank, cfg: &TrainConfig, rng: &mut RngState) -> Result<(Tensor, (Tensor, Tensor))> {
    let p = cfg.patch_lr;
    let m = MAX_PRETRAIN_SHIFT as usize;
    let (mut refs, mut srcs, mut flows) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.batch {
        let frame = &bank.canvases[rng.gen_range(0..bank.canvases.len())];
        let (h, w) = (frame.dim(1), frame.dim(2));
        if h < p + 2 * m || w < p + 2 * m {
            return Err(Error::Data(format!("flow pretraining needs canvases of at least {} px", p + 2 * m)));
        }
        let sx = rng.gen_range(-MAX_PRETRAIN_SHIFT..=MAX_PRETRAIN_SHIFT);
        let sy = rng.gen_range(-MAX_PRETRAIN_SHIFT..=MAX_PRETRAIN_SHIFT);
        let oy = rng.gen_range(m..=h - p - m);
        let ox = rng.gen_range(m..=w - p - m);
        // ref(y, x) = frame(oy + sy + y, ox + sx + x) = src(y + sy, x + sx)
        let crop = |y: usize, x: usize| -> Result<Tensor> { add_batch_dim(&frame.narrow(1, y, p)?.narrow(2, x, p)?) };
        refs.push(crop((oy as i64 + sy) as usize, (ox as i64 + sx) as usize)?);
        srcs.push(crop(oy, ox)?);
        let mut f = Tensor::zeros(&[1, 2, p, p]);
        let n = p * p;
        f.data_mut()[..n].fill(sx as f32);
        f.data_mut()[n..].fill(sy as f32);
        flows.push(f);
    }
    let cat = |v: &[Tensor]| Tensor::concat(&v.iter().collect::<Vec<_>>(), 0);
    Ok((cat(&refs)?, (cat(&srcs)?, cat(&flows)?)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn loss_csv(log: &[LossRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "loss", "lr_main", "lr_flow"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in log {
        w.write_record([r.iter.to_string(), r.loss.to_string(), r.lr_main.to_string(), r.lr_flow.to_string()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Data(format!("{}: bad row {rec:?}", path.display())))
            };
            Ok(LossRecord {
                iter: f(0)? as u64,
                loss: f(1)?,
                lr_main: f(2)?,
                lr_flow: f(3)?,
            })
        })
        .collect()
}

/// Centred moving average with window `w` (shrinking at the ends).
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let h = w / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Mean of the first and last `frac` of a loss log.
pub fn loss_endpoints(log: &[LossRecord], frac: f64) -> (f64, f64) {
    let n = ((log.len() as f64 * frac).ceil() as usize).clamp(1, log.len().max(1));
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len().max(1) as f64;
    (mean(&log[..n.min(log.len())]), mean(&log[log.len().saturating_sub(n)..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sequence, Pattern};

    fn tiny() -> (ModelConfig, TrainConfig, TrainData) {
        let mut m = ModelConfig::toy();
        m.channels = 4;
        m.resblocks = 1;
        m.cmb_blocks = 1;
        m.tsb_blocks = 1;
        m.token_dim = 16;
        let t = TrainConfig {
            total_iters: 4,
            freeze_flow_iters: 2,
            flow_pretrain_iters: 2,
            batch: 2,
            patch_lr: 8,
            clip_len: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let hr = synth_sequence(Pattern::GradientNoise, &[(2.0, 0.0)], 4, 64, 64, 3).unwrap();
        let data = TrainData::from_hr(vec![hr], DegradationKind::Bicubic, 4).unwrap();
        (m, t, data)
    }

    #[test]
    fn batch_layout_is_frame_major() {
        let (_, t, data) = tiny();
        let b = sample_batch(&data, &t, &mut RngState::new(0)).unwrap();
        assert_eq!(b.lr.len(), 2);
        assert_eq!(b.lr[0].shape(), &[2, 3, 8, 8]);
        assert_eq!(b.hr.shape(), &[4, 3, 32, 32]);
    }

    #[test]
    fn frozen_flow_does_not_move() {
        let (m, t, data) = tiny();
        let mut tr = Trainer::new(TcNet::new(&m, 1).unwrap(), TrainConfig { flow_pretrain_iters: 0, ..t }).unwrap();
        let flow_before: Vec<Tensor> = tr
            .model
            .store
            .iter()
            .filter(|(_, p)| p.group == ParamGroup::Flow)
            .map(|(_, p)| p.value.clone())
            .collect();
        tr.train_step(&data).unwrap();
        tr.train_step(&data).unwrap();
        let flow_after: Vec<Tensor> = tr
            .model
            .store
            .iter()
            .filter(|(_, p)| p.group == ParamGroup::Flow)
            .map(|(_, p)| p.value.clone())
            .collect();
        assert_eq!(flow_before, flow_after);
        let rec = tr.train_step(&data).unwrap();
        assert!(rec.lr_flow > 0.0);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (m, t, data) = tiny();
        let mut full = Trainer::new(TcNet::new(&m, 1).unwrap(), t.clone()).unwrap();
        full.run(&data, |_, _| {}).unwrap();

        let mut half = Trainer::new(TcNet::new(&m, 1).unwrap(), TrainConfig { total_iters: 4, ..t }).unwrap();
        half.run_until(&data, 2, |_, _| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        half.save(dir.path()).unwrap();
        let mut resumed = Trainer::load(dir.path(), &BTreeMap::new()).unwrap();
        assert_eq!(resumed.step, 2);
        resumed.run(&data, |_, _| {}).unwrap();
        assert_eq!(resumed.log, full.log);
        for ((_, a), (_, b)) in resumed.model.store.iter().zip(full.model.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn smoothing_and_endpoints() {
        assert_eq!(smooth(&[1.0, 2.0, 3.0], 3), vec![1.5, 2.0, 2.5]);
        let log: Vec<LossRecord> = (0..10)
            .map(|i| LossRecord {
                iter: i,
                loss: 10.0 - i as f64,
                lr_main: 0.0,
                lr_flow: 0.0,
            })
            .collect();
        assert_eq!(loss_endpoints(&log, 0.2), (9.5, 1.5));
    }
}

