//! Model and training hyperparameters, and the flat `key=value` config
//! format with dotted section keys (`model.channels=64`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecurrentVariant {
    /// No alignment: `cat(x_i, g_{i−1})`.
    Vanilla,
    /// Forward warping only: `cat(h_{i−1}, x_i, g_{i−1})`.
    Motion,
    /// Bidirectional warping: `cat(h_{i−1}, x_i, g_{i−1}, h_{i+1})`.
    Hybrid,
}

impl RecurrentVariant {
    pub const ALL: [RecurrentVariant; 3] = [Self::Vanilla, Self::Motion, Self::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Motion => "motion",
            Self::Hybrid => "hybrid",
        }
    }

    pub fn uses_prev(self) -> bool {
        self != Self::Vanilla
    }

    pub fn uses_next(self) -> bool {
        self == Self::Hybrid
    }
}

impl FromStr for RecurrentVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "motion" => Ok(Self::Motion),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(Error::Config(format!("unknown variant {s:?} (vanilla|motion|hybrid)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageKind {
    /// One 3×3 convolution on the concatenation.
    Conv,
    Pyramid,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::Pyramid => "pyramid",
        }
    }
}

impl FromStr for StageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Self::Conv),
            "pyramid" => Ok(Self::Pyramid),
            _ => Err(Error::Config(format!("unknown fusion stage {s:?} (conv|pyramid)"))),
        }
    }
}

/// How stability features are merged back into the propagation feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// One fusion of the single available branch (or of `g` with itself
    /// when no branch is enabled) with `g`.
    OneStage,
    /// `stage2(stage1(g_cm, g_sa), g)`; needs both branches.
    Progressive,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OneStage => "one-stage",
            Self::Progressive => "progressive",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-stage" | "one_stage" => Ok(Self::OneStage),
            "progressive" => Ok(Self::Progressive),
            _ => Err(Error::Config(format!(
                "unknown fusion mode {s:?} (one-stage|progressive)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub stage1: StageKind,
    pub stage2: StageKind,
    pub levels: usize,
    /// Channels at the internal pyramid levels; 0 means "same as the model".
    pub pyramid_channels: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Progressive,
            stage1: StageKind::Pyramid,
            stage2: StageKind::Pyramid,
            levels: 3,
            pyramid_channels: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub resblocks: usize,
    pub cmb_blocks: usize,
    pub tsb_blocks: usize,
    pub patch3d: usize,
    /// Attention width `d_e` inside each TSB.
    pub token_dim: usize,
    pub scale: usize,
    pub variant: RecurrentVariant,
    pub fusion: FusionConfig,
    pub flow_levels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            resblocks: 20,
            cmb_blocks: 8,
            tsb_blocks: 8,
            patch3d: 8,
            token_dim: 256,
            scale: 4,
            variant: RecurrentVariant::Hybrid,
            fusion: FusionConfig::default(),
            flow_levels: 3,
        }
    }
}

impl ModelConfig {
    /// Small configuration the test-suite trains: C=16, two blocks per
    /// stack, 4×4×4 patches.
    pub fn toy() -> Self {
        Self {
            channels: 16,
            resblocks: 2,
            cmb_blocks: 2,
            tsb_blocks: 2,
            patch3d: 4,
            token_dim: 64,
            ..Self::default()
        }
    }

    pub fn pyramid_channels(&self) -> usize {
        match self.fusion.pyramid_channels {
            0 => self.channels,
            c => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.scale, 2 | 4) {
            return bad(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.channels == 0 || self.patch3d == 0 || self.token_dim == 0 || self.flow_levels == 0 {
            return bad("channels, patch3d, token_dim and flow_levels must be positive".into());
        }
        if !matches!(self.fusion.levels, 2 | 3) {
            return bad(format!("pyramid levels must be 2 or 3, got {}", self.fusion.levels));
        }
        let both = self.cmb_blocks > 0 && self.tsb_blocks > 0;
        match (self.fusion.mode, both) {
            (FusionMode::Progressive, false) => bad(
                "progressive fusion needs both the CMB and TSB branches (set fusion.mode=one-stage)".into(),
            ),
            (FusionMode::OneStage, true) => bad(
                "one-stage fusion takes one stability branch; with both enabled use progressive".into(),
            ),
            _ => Ok(()),
        }
    }

    /// LR spatial sizes must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        let mut m = 1usize << (self.flow_levels - 1);
        m = lcm(m, 1 << (self.fusion.levels - 1));
        if self.tsb_blocks > 0 {
            m = lcm(m, self.patch3d);
        }
        m
    }

    pub fn to_kv(&self, out: &mut BTreeMap<String, String>) {
        let mut put = |k: &str, v: String| {
            out.insert(format!("model.{k}"), v);
        };
        put("channels", self.channels.to_string());
        put("resblocks", self.resblocks.to_string());
        put("cmb_blocks", self.cmb_blocks.to_string());
        put("tsb_blocks", self.tsb_blocks.to_string());
        put("patch3d", self.patch3d.to_string());
        put("token_dim", self.token_dim.to_string());
        put("scale", self.scale.to_string());
        put("variant", self.variant.as_str().into());
        put("flow_levels", self.flow_levels.to_string());
        put("fusion.mode", self.fusion.mode.as_str().into());
        put("fusion.stage1", self.fusion.stage1.as_str().into());
        put("fusion.stage2", self.fusion.stage2.as_str().into());
        put("fusion.levels", self.fusion.levels.to_string());
        put("fusion.pyramid_channels", self.fusion.pyramid_channels.to_string());
    }

    /// Overwrite fields named in `kv`; unknown `model.*` keys are errors.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            let Some(field) = k.strip_prefix("model.") else {
                continue;
            };
            match field {
                "channels" => self.channels = parse(k, v)?,
                "resblocks" => self.resblocks = parse(k, v)?,
                "cmb_blocks" => self.cmb_blocks = parse(k, v)?,
                "tsb_blocks" => self.tsb_blocks = parse(k, v)?,
                "patch3d" => self.patch3d = parse(k, v)?,
                "token_dim" => self.token_dim = parse(k, v)?,
                "scale" => self.scale = parse(k, v)?,
                "variant" => self.variant = v.parse()?,
                "flow_levels" => self.flow_levels = parse(k, v)?,
                "fusion.mode" => self.fusion.mode = v.parse()?,
                "fusion.stage1" => self.fusion.stage1 = v.parse()?,
                "fusion.stage2" => self.fusion.stage2 = v.parse()?,
                "fusion.levels" => self.fusion.levels = parse(k, v)?,
                "fusion.pyramid_channels" => self.fusion.pyramid_channels = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        Ok(())
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_flow: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub total_iters: u64,
    pub freeze_flow_iters: u64,
    /// Supervised flow iterations on shifted synthetic crops, run before
    /// the main loop; 0 disables.
    pub flow_pretrain_iters: u64,
    pub lr_flow_pretrain: f64,
    pub batch: usize,
    pub patch_lr: usize,
    pub clip_len: usize,
    pub charbonnier_eps: f64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_main: 1e-4,
            lr_flow: 2.5e-5,
            lr_min: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            total_iters: 800,
            freeze_flow_iters: 200,
            flow_pretrain_iters: 0,
            lr_flow_pretrain: 1e-3,
            batch: 4,
            patch_lr: 64,
            clip_len: 4,
            charbonnier_eps: 1e-3,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Settings for the toy model on one CPU core: small LR patches, short
    /// clips, a higher main rate and a supervised flow warm-up.
    pub fn toy() -> Self {
        Self {
            lr_main: 1e-3,
            flow_pretrain_iters: 20_000,
            batch: 2,
            patch_lr: 16,
            clip_len: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_main, self.lr_flow, self.beta1, self.beta2, self.eps_opt, self.charbonnier_eps];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates, betas and epsilons must be positive".into()));
        }
        if !(self.lr_min >= 0.0) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("lr_min must be ≥ 0 and betas < 1".into()));
        }
        if self.total_iters == 0 {
            return Err(Error::Config("total_iters must be positive".into()));
        }
        if self.freeze_flow_iters > self.total_iters {
            return Err(Error::Config(format!(
                "freeze_flow_iters {} exceeds total_iters {}",
                self.freeze_flow_iters, self.total_iters
            )));
        }
        if self.batch == 0 || self.patch_lr == 0 || self.clip_len == 0 {
            return Err(Error::Config("batch, patch_lr and clip_len must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self, out: &mut BTreeMap<String, String>) {
        let mut put = |k: &str, v: String| {
            out.insert(format!("train.{k}"), v);
        };
        put("lr_main", self.lr_main.to_string());
        put("lr_flow", self.lr_flow.to_string());
        put("lr_min", self.lr_min.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("eps_opt", self.eps_opt.to_string());
        put("total_iters", self.total_iters.to_string());
        put("freeze_flow_iters", self.freeze_flow_iters.to_string());
        put("flow_pretrain_iters", self.flow_pretrain_iters.to_string());
        put("lr_flow_pretrain", self.lr_flow_pretrain.to_string());
        put("batch", self.batch.to_string());
        put("patch_lr", self.patch_lr.to_string());
        put("clip_len", self.clip_len.to_string());
        put("charbonnier_eps", self.charbonnier_eps.to_string());
        put("seed", self.seed.to_string());
        put("log_every", self.log_every.to_string());
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            let Some(field) = k.strip_prefix("train.") else {
                continue;
            };
            match field {
                "lr_main" => self.lr_main = parse(k, v)?,
                "lr_flow" => self.lr_flow = parse(k, v)?,
                "lr_min" => self.lr_min = parse(k, v)?,
                "beta1" => self.beta1 = parse(k, v)?,
                "beta2" => self.beta2 = parse(k, v)?,
                "eps_opt" => self.eps_opt = parse(k, v)?,
                "total_iters" => self.total_iters = parse(k, v)?,
                "freeze_flow_iters" => self.freeze_flow_iters = parse(k, v)?,
                "flow_pretrain_iters" => self.flow_pretrain_iters = parse(k, v)?,
                "lr_flow_pretrain" => self.lr_flow_pretrain = parse(k, v)?,
                "batch" => self.batch = parse(k, v)?,
                "patch_lr" => self.patch_lr = parse(k, v)?,
                "clip_len" => self.clip_len = parse(k, v)?,
                "charbonnier_eps" => self.charbonnier_eps = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "log_every" => self.log_every = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_kv(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn format_kv(kv: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in kv {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// Keys outside the `model.` and `train.` sections are rejected so typos
/// do not pass silently.
pub fn check_sections(kv: &BTreeMap<String, String>, allowed: &[&str]) -> Result<()> {
    for k in kv.keys() {
        if !allowed.iter().any(|p| k.starts_with(p)) {
            return Err(Error::Config(format!("unknown key {k}")));
        }
    }
    Ok(())
}
