//! The full network: alignment, propagation, stability branches, fusion,
//! refinement and reconstruction, plus checkpoint I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tcvsr_tensor::{io as tio, Binding, Builder, Graph, ParamGroup, ParamStore, Real, RngState, Tensor, Var};

use crate::config::{format_kv, read_kv, ModelConfig};
use crate::data::Sequence;
use crate::error::{io_err, Error, Result};
use crate::flow::{align_sequence, Alignment, FlowPyramidParams};
use crate::fusion::Fusion;
use crate::propagation::{AlignedStage, Reconstruct};
use crate::stability::{stability_forward, CmbParams, TsbParams};

/// Parameter layout of the network. Holds parameter ids only, so the same
/// layout runs against an `f32` store or its `f64` cast.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub flow: FlowPyramidParams,
    pub propagation: AlignedStage,
    pub cmb: Vec<CmbParams>,
    pub tsb: Vec<TsbParams>,
    pub fusion: Fusion,
    pub refine: AlignedStage,
    pub reconstruct: Reconstruct,
}

/// Every intermediate of one forward pass. Multi-frame tensors use the
/// frame-major `(T·B)×C×H×W` layout.
pub struct Trace<T: Real = f32> {
    pub frames: usize,
    pub batch: usize,
    pub alignment: Alignment<T>,
    /// `g_i`, one `B×C×H×W` per frame.
    pub features: Vec<Var<T>>,
    pub g_cm: Var<T>,
    pub g_sa: Var<T>,
    pub fused: Var<T>,
    pub refined: Var<T>,
    /// `(T·B)×3×(sH)×(sW)`, unclamped.
    pub sr: Var<T>,
}

impl<T: Real> Trace<T> {
    pub fn sr_frame(&self, g: &Graph<T>, t: usize) -> Result<Var<T>> {
        Ok(g.narrow(&self.sr, 0, t * self.batch, self.batch)?)
    }
}

impl Network {
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let flow = FlowPyramidParams::build(store, rng, config.flow_levels);
        let mut b = Builder::new(store, rng, ParamGroup::Main);
        let propagation = AlignedStage::build(&mut b, "propagation", config.variant, c, config.resblocks);
        let cmb = (0..config.cmb_blocks)
            .map(|i| CmbParams::build(&mut b, &format!("cmb{i}"), c))
            .collect();
        let tsb = (0..config.tsb_blocks)
            .map(|i| TsbParams::build(&mut b, &format!("tsb{i}"), c, config.patch3d, config.token_dim))
            .collect();
        let fusion = Fusion::build(&mut b, &config.fusion, c, config.pyramid_channels());
        let refine = AlignedStage::build(&mut b, "refine", config.variant, c, config.resblocks);
        let reconstruct = Reconstruct::build(&mut b, c, config.scale)?;
        Ok(Self {
            config: config.clone(),
            flow,
            propagation,
            cmb,
            tsb,
            fusion,
            refine,
            reconstruct,
        })
    }

    fn check_frames<T: Real>(&self, frames: &[Var<T>]) -> Result<(usize, usize, usize)> {
        let Some(first) = frames.first() else {
            return Err(Error::Shape("empty clip".into()));
        };
        let (b, h, w) = match *first.shape() {
            [b, 3, h, w] => (b, h, w),
            ref s => return Err(Error::Shape(format!("frames must be B×3×H×W, got {s:?}"))),
        };
        if let Some(f) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(Error::Shape(format!("frame shapes differ: {:?} vs {:?}", f.shape(), first.shape())));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("LR size {h}×{w} must be a multiple of {m} for this model")));
        }
        Ok((b, h, w))
    }

    /// Recurrent sweep: returns the alignment cache and `g_1..g_T`.
    pub fn run_sequence<T: Real>(&self, p: &Binding<'_, T>, frames: &[Var<T>]) -> Result<(Alignment<T>, Vec<Var<T>>)> {
        let g = p.graph();
        let (b, h, w) = self.check_frames(frames)?;
        let v = self.config.variant;
        let al = align_sequence(&self.flow, p, frames, v.uses_prev(), v.uses_next())?;
        let mut hidden = g.constant(Tensor::zeros(&[b, self.config.channels, h, w]));
        let mut feats = Vec::with_capacity(frames.len());
        for (i, x) in frames.iter().enumerate() {
            hidden = self
                .propagation
                .propagate(p, x, &hidden, al.h_prev[i].as_ref(), al.h_next[i].as_ref())?;
            feats.push(hidden.clone());
        }
        Ok((al, feats))
    }

    /// Full forward pass on `frames` (each `B×3×H×W`).
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, frames: &[Var<T>]) -> Result<Trace<T>> {
        let g = p.graph();
        let (b, _, _) = self.check_frames(frames)?;
        let t = frames.len();
        let (alignment, features) = self.run_sequence(p, frames)?;
        let stacked: Vec<&Var<T>> = features.iter().collect();
        let x_feat = g.concat(&stacked, 0)?;
        let (g_cm, g_sa) = stability_forward(p, &x_feat, t, b, &self.cmb, &self.tsb)?;
        let fused = match (self.cmb.is_empty(), self.tsb.is_empty()) {
            (false, false) => self.fusion.progressive_fuse(p, &g_cm, &g_sa, &x_feat)?,
            (false, true) => self.fusion.one_stage_fuse(p, &g_cm, &x_feat)?,
            (true, false) => self.fusion.one_stage_fuse(p, &g_sa, &x_feat)?,
            (true, true) => self.fusion.one_stage_fuse(p, &x_feat, &x_feat)?,
        };
        let frame_refs: Vec<&Var<T>> = frames.iter().collect();
        let x_all = g.concat(&frame_refs, 0)?;
        let hp: Vec<Option<&Var<T>>> = alignment.h_prev.iter().map(Option::as_ref).collect();
        let hn: Vec<Option<&Var<T>>> = alignment.h_next.iter().map(Option::as_ref).collect();
        let refined = self.refine.refine(p, &hp, &x_all, &hn, &fused)?;
        let sr = self.reconstruct.forward(p, &refined)?;
        Ok(Trace {
            frames: t,
            batch: b,
            alignment,
            features,
            g_cm,
            g_sa,
            fused,
            refined,
            sr,
        })
    }
}

/// A network with its parameter values.
#[derive(Clone, Debug)]
pub struct TcNet {
    pub net: Network,
    pub store: ParamStore,
}

impl TcNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        let net = Network::build(config, &mut store, &mut rng)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Super-resolve a whole LR sequence; output clamped to `[0, 1]`.
    pub fn upscale(&self, lr: &Sequence) -> Result<Sequence> {
        lr.validate()?;
        let g = Graph::inference();
        let p = Binding::new(&g, &self.store);
        let frames = lr
            .frames
            .iter()
            .map(|f| Ok(g.constant(f.clone().reshape(&[1, 3, f.dim(1), f.dim(2)])?)))
            .collect::<Result<Vec<_>>>()?;
        let trace = self.net.forward(&p, &frames)?;
        let sr = trace.sr.value();
        let (h, w) = (sr.dim(2), sr.dim(3));
        let out = (0..lr.len())
            .map(|t| Ok(sr.narrow(0, t, 1)?.reshape(&[3, h, w])?.clamp(0.0, 1.0)))
            .collect::<Result<Vec<_>>>()?;
        Sequence::new(out)
    }

    /// Write `config.txt`, `manifest.txt` and one `.tct` per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut kv = BTreeMap::new();
        self.net.config.to_kv(&mut kv);
        let cfg = dir.join(CONFIG_FILE);
        fs::write(&cfg, format_kv(&kv)).map_err(|e| io_err(&cfg, e))?;
        save_store(&self.store, dir, MANIFEST_FILE, "")
    }

    /// Rebuild from `config.txt` and load every parameter, checking shapes.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut config = ModelConfig::default();
        config.apply(&read_kv(&dir.join(CONFIG_FILE))?)?;
        let mut model = Self::new(&config, 0)?;
        load_store(&mut model.store, dir, MANIFEST_FILE, "")?;
        Ok(model)
    }
}

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn tensor_file(prefix: &str, name: &str) -> String {
    format!("{prefix}{name}.tct")
}

/// Manifest lines: `<name> <group> <d0>x<d1>x…`.
pub fn save_store(store: &ParamStore, dir: &Path, manifest: &str, prefix: &str) -> Result<()> {
    let mut text = String::new();
    for (_, prm) in store.iter() {
        let shape: Vec<String> = prm.value.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(text, "{} {} {}", prm.name, prm.group.as_str(), shape.join("x"));
        tio::save(dir.join(tensor_file(prefix, &prm.name)), &prm.value)?;
    }
    let path = dir.join(manifest);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn load_store(store: &mut ParamStore, dir: &Path, manifest: &str, prefix: &str) -> Result<()> {
    let path = dir.join(manifest);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut seen = 0usize;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, group, shape] = parts[..] else {
            return Err(Error::Checkpoint(format!("bad manifest line {line:?}")));
        };
        let id = store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} is not part of this model")))?;
        let want = store.get(id).value.shape().to_vec();
        let listed: Vec<usize> = shape
            .split('x')
            .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad shape {shape:?} for {name}"))))
            .collect::<Result<_>>()?;
        if listed != want || ParamGroup::parse(group) != Some(store.get(id).group) {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint has {group} {listed:?}, model expects {} {want:?}",
                store.get(id).group.as_str()
            )));
        }
        let t: Tensor = tio::load(dir.join(tensor_file(prefix, name)))?;
        store.assign(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {seen} parameters, model has {}",
            store.len()
        )));
    }
    Ok(())
}
