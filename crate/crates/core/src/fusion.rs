//! Two-input fusion stages (single convolution or multi-scale pyramid) and
//! their one-stage / progressive composition.

use rand::Rng;
use tcvsr_tensor::{
    resblocks_forward, Binding, Builder, Conv2d, ConvTranspose2d, Init, PaddingMode, Real, ResBlock, Var,
};

use crate::config::{FusionConfig, FusionMode, StageKind};
use crate::error::{Error, Result};

/// Residual blocks per pyramid level.
pub const PYRAMID_RESBLOCKS: usize = 2;

#[derive(Clone, Debug)]
struct Level {
    /// 4×4 stride-2 convolution.
    down: Conv2d,
    blocks: Vec<ResBlock>,
    /// 2×2 stride-2 transposed convolution, zero-initialised.
    up: ConvTranspose2d,
}

/// `p = proj(cat(a, b))`, then `up(Res(down(Res(p)))) + p`; a third level
/// nests one more down/up pair (with its own skip) at the coarsest scale.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub proj: Conv2d,
    top: Vec<ResBlock>,
    outer: Level,
    inner: Option<Level>,
    pub levels: usize,
}

fn level<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, c_in: usize, c_mid: usize) -> Level {
    Level {
        down: b.conv_full(&format!("{name}.down"), c_in, c_mid, 4, 2, 1, PaddingMode::Zero, Init::FanIn),
        blocks: (0..PYRAMID_RESBLOCKS)
            .map(|i| b.resblock(&format!("{name}.res{i}"), c_mid))
            .collect(),
        up: b.conv_transpose(&format!("{name}.up"), c_mid, c_in, 2, 2, Init::Zero),
    }
}

impl Level {
    fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>, inner: Option<&Level>) -> Result<Var<T>> {
        let g = p.graph();
        let d = self.down.forward(p, x)?;
        let mut m = resblocks_forward(&self.blocks, p, &d)?;
        if let Some(l) = inner {
            m = g.add(&m, &l.forward(p, &m, None)?)?;
        }
        Ok(self.up.forward(p, &m)?)
    }
}

impl Pyramid {
    pub fn build<T: Real, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        pyramid_channels: usize,
        levels: usize,
    ) -> Self {
        Self {
            proj: b.conv(&format!("{name}.proj"), 2 * channels, channels, 1, Init::FanIn),
            top: (0..PYRAMID_RESBLOCKS)
                .map(|i| b.resblock(&format!("{name}.res{i}"), channels))
                .collect(),
            outer: level(b, &format!("{name}.level1"), channels, pyramid_channels),
            inner: (levels == 3).then(|| level(b, &format!("{name}.level2"), pyramid_channels, pyramid_channels)),
            levels,
        }
    }

    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        check_pair(a, b)?;
        let (h, w) = (a.shape()[2], a.shape()[3]);
        let m = 1 << (self.levels - 1);
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "pyramid_fuse: {h}×{w} is not divisible by {m} for {} levels",
                self.levels
            )));
        }
        let skip = self.proj.forward(p, &g.concat(&[a, b], 1)?)?;
        let t = resblocks_forward(&self.top, p, &skip)?;
        let u = self.outer.forward(p, &t, self.inner.as_ref())?;
        Ok(g.add(&u, &skip)?)
    }
}

fn check_pair<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(Error::Shape(format!("fuse: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum FusionStage {
    /// One 3×3 convolution on `cat(a, b)`.
    Conv(Conv2d),
    Pyramid(Pyramid),
}

impl FusionStage {
    pub fn build<T: Real, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        kind: StageKind,
        channels: usize,
        pyramid_channels: usize,
        levels: usize,
    ) -> Self {
        match kind {
            StageKind::Conv => FusionStage::Conv(b.conv(&format!("{name}.conv"), 2 * channels, channels, 3, Init::FanIn)),
            StageKind::Pyramid => FusionStage::Pyramid(Pyramid::build(b, name, channels, pyramid_channels, levels)),
        }
    }

    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        match self {
            FusionStage::Conv(conv) => {
                check_pair(a, b)?;
                Ok(conv.forward(p, &p.graph().concat(&[a, b], 1)?)?)
            }
            FusionStage::Pyramid(pyr) => pyr.forward(p, a, b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub mode: FusionMode,
    /// Present only in progressive mode.
    pub stage1: Option<FusionStage>,
    pub stage2: FusionStage,
}

impl Fusion {
    pub fn build<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, cfg: &FusionConfig, channels: usize, pyramid_channels: usize) -> Self {
        Self {
            mode: cfg.mode,
            stage1: (cfg.mode == FusionMode::Progressive)
                .then(|| FusionStage::build(b, "fusion.stage1", cfg.stage1, channels, pyramid_channels, cfg.levels)),
            stage2: FusionStage::build(b, "fusion.stage2", cfg.stage2, channels, pyramid_channels, cfg.levels),
        }
    }

    /// `stage2(stage1(g_cm, g_sa), g)`.
    pub fn progressive_fuse<T: Real>(&self, p: &Binding<'_, T>, g_cm: &Var<T>, g_sa: &Var<T>, g: &Var<T>) -> Result<Var<T>> {
        let Some(s1) = &self.stage1 else {
            return Err(Error::Usage("progressive fusion requested on a one-stage model".into()));
        };
        let mid = s1.forward(p, g_cm, g_sa)?;
        self.stage2.forward(p, &mid, g)
    }

    /// `stage2(x, g)` for the single available stability branch.
    pub fn one_stage_fuse<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>, g: &Var<T>) -> Result<Var<T>> {
        if self.mode == FusionMode::Progressive {
            return Err(Error::Usage(
                "both stability branches are present; use progressive fusion".into(),
            ));
        }
        self.stage2.forward(p, x, g)
    }
}
