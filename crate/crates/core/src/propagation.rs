//! Recurrent propagation, refinement and the pixel-shuffle reconstruction
//! head.

use rand::Rng;
use tcvsr_tensor::{resblocks_forward, Binding, Builder, Conv2d, Init, Real, ResBlock, Tensor, Var, LEAKY_SLOPE};

use crate::config::RecurrentVariant;
use crate::error::{Error, Result};

/// A residual stack fed by the frame, one C-channel state (the previous
/// hidden feature, or the fused feature when refining) and, per variant,
/// the lifted aligned neighbours.
#[derive(Clone, Debug)]
pub struct AlignedStage {
    pub variant: RecurrentVariant,
    pub channels: usize,
    /// 3×3 convolutions lifting warped frames to C channels.
    pub lift_prev: Option<Conv2d>,
    pub lift_next: Option<Conv2d>,
    pub conv_in: Conv2d,
    pub blocks: Vec<ResBlock>,
}

impl AlignedStage {
    pub fn build<T: Real, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        variant: RecurrentVariant,
        channels: usize,
        resblocks: usize,
    ) -> Self {
        let lift_prev = variant
            .uses_prev()
            .then(|| b.conv(&format!("{name}.lift_prev"), 3, channels, 3, Init::FanIn));
        let lift_next = variant
            .uses_next()
            .then(|| b.conv(&format!("{name}.lift_next"), 3, channels, 3, Init::FanIn));
        let c_in = 3 + channels * (1 + usize::from(lift_prev.is_some()) + usize::from(lift_next.is_some()));
        Self {
            variant,
            channels,
            lift_prev,
            lift_next,
            conv_in: b.conv(&format!("{name}.conv_in"), c_in, channels, 3, Init::FanIn),
            blocks: (0..resblocks).map(|i| b.resblock(&format!("{name}.res{i}"), channels)).collect(),
        }
    }

    /// Replace a missing neighbour. The hybrid variant reuses the other
    /// direction's warped frame; otherwise the slot stays empty (zeros).
    fn substitute<'v, T: Real>(
        &self,
        h_prev: Option<&'v Var<T>>,
        h_next: Option<&'v Var<T>>,
    ) -> (Option<&'v Var<T>>, Option<&'v Var<T>>) {
        match self.variant {
            RecurrentVariant::Hybrid => (h_prev.or(h_next), h_next.or(h_prev)),
            RecurrentVariant::Motion => (h_prev, None),
            RecurrentVariant::Vanilla => (None, None),
        }
    }

    /// Lift `sources` (one optional `B×3×H×W` frame per item, stacked along
    /// the batch) with `conv`; absent items become zero features. All
    /// present sources go through a single convolution call.
    fn lift<T: Real>(
        &self,
        p: &Binding<'_, T>,
        conv: &Conv2d,
        sources: &[Option<&Var<T>>],
        like: &[usize],
    ) -> Result<Var<T>> {
        let g = p.graph();
        let (b, h, w) = (like[0], like[2], like[3]);
        let present: Vec<&Var<T>> = sources.iter().flatten().copied().collect();
        let zero = || g.constant(Tensor::zeros(&[b, self.channels, h, w]));
        if present.is_empty() {
            let parts: Vec<Var<T>> = sources.iter().map(|_| zero()).collect();
            let refs: Vec<&Var<T>> = parts.iter().collect();
            return Ok(g.concat(&refs, 0)?);
        }
        let lifted = conv.forward(p, &g.concat(&present, 0)?)?;
        if present.len() == sources.len() {
            return Ok(lifted);
        }
        let mut k = 0;
        let mut parts = Vec::with_capacity(sources.len());
        for s in sources {
            if s.is_some() {
                parts.push(g.narrow(&lifted, 0, k * b, b)?);
                k += 1;
            } else {
                parts.push(zero());
            }
        }
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(g.concat(&refs, 0)?)
    }

    /// Lifted neighbour features for `n` frames, batch-stacked.
    fn neighbours<T: Real>(
        &self,
        p: &Binding<'_, T>,
        h_prev: &[Option<&Var<T>>],
        h_next: &[Option<&Var<T>>],
        like: &[usize],
    ) -> Result<(Option<Var<T>>, Option<Var<T>>)> {
        let (mut prev, mut next) = (Vec::new(), Vec::new());
        for (a, b) in h_prev.iter().zip(h_next) {
            let (sa, sb) = self.substitute(*a, *b);
            prev.push(sa);
            next.push(sb);
        }
        let lp = self.lift_prev.as_ref().map(|c| self.lift(p, c, &prev, like)).transpose()?;
        let ln = self.lift_next.as_ref().map(|c| self.lift(p, c, &next, like)).transpose()?;
        Ok((lp, ln))
    }

    fn body<T: Real>(&self, p: &Binding<'_, T>, parts: &[&Var<T>]) -> Result<Var<T>> {
        let g = p.graph();
        let x = g.concat(parts, 1)?;
        if x.shape()[1] != self.conv_in.c_in {
            return Err(Error::Shape(format!(
                "stage input has {} channels, expected {}",
                x.shape()[1],
                self.conv_in.c_in
            )));
        }
        let x = g.leaky_relu(&self.conv_in.forward(p, &x)?, LEAKY_SLOPE)?;
        Ok(resblocks_forward(&self.blocks, p, &x)?)
    }

    fn check_state<T: Real>(&self, x: &Var<T>, state: &Var<T>, what: &str) -> Result<()> {
        let (xs, ss) = (x.shape(), state.shape());
        if xs.len() != 4 || xs[1] != 3 || ss != [xs[0], self.channels, xs[2], xs[3]] {
            return Err(Error::Shape(format!("{what}: frame {xs:?} with state {ss:?}")));
        }
        Ok(())
    }

    /// `g_i = Res(cat(h_{i−1}, x_i, g_{i−1}, h_{i+1}))`, with the neighbour
    /// slots present per variant.
    pub fn propagate<T: Real>(
        &self,
        p: &Binding<'_, T>,
        x: &Var<T>,
        hidden: &Var<T>,
        h_prev: Option<&Var<T>>,
        h_next: Option<&Var<T>>,
    ) -> Result<Var<T>> {
        self.check_state(x, hidden, "propagate")?;
        let (lp, ln) = self.neighbours(p, &[h_prev], &[h_next], x.shape())?;
        let mut parts: Vec<&Var<T>> = Vec::new();
        parts.extend(lp.as_ref());
        parts.push(x);
        parts.push(hidden);
        parts.extend(ln.as_ref());
        self.body(p, &parts)
    }

    /// `R_i = Res(cat(h_{i−1}, x_i, h_{i+1}, ĝ_i))` for `n` frames at once;
    /// `x` and `fused` are batch-stacked, neighbours listed per frame.
    pub fn refine<T: Real>(
        &self,
        p: &Binding<'_, T>,
        h_prev: &[Option<&Var<T>>],
        x: &Var<T>,
        h_next: &[Option<&Var<T>>],
        fused: &Var<T>,
    ) -> Result<Var<T>> {
        self.check_state(x, fused, "refine")?;
        let n = h_prev.len().max(1);
        let per = x.shape()[0] / n;
        let like = [per, 3, x.shape()[2], x.shape()[3]];
        let (lp, ln) = self.neighbours(p, h_prev, h_next, &like)?;
        let mut parts: Vec<&Var<T>> = Vec::new();
        parts.extend(lp.as_ref());
        parts.push(x);
        parts.extend(ln.as_ref());
        parts.push(fused);
        self.body(p, &parts)
    }
}

/// Convolution + ×2 pixel shuffle stages, then a convolution to RGB.
#[derive(Clone, Debug)]
pub struct Reconstruct {
    pub ups: Vec<Conv2d>,
    pub out: Conv2d,
    pub scale: usize,
}

impl Reconstruct {
    pub fn build<T: Real, R: Rng>(b: &mut Builder<'_, T, R>, channels: usize, scale: usize) -> Result<Self> {
        let stages = match scale {
            2 => 1,
            4 => 2,
            _ => return Err(Error::Config(format!("unsupported scale {scale} (2 or 4)"))),
        };
        Ok(Self {
            ups: (0..stages)
                .map(|i| b.conv(&format!("reconstruct.up{i}"), channels, 4 * channels, 3, Init::FanIn))
                .collect(),
            out: b.conv("reconstruct.out", channels, 3, 3, Init::FanIn),
            scale,
        })
    }

    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, r: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        let mut x = r.clone();
        for conv in &self.ups {
            x = g.leaky_relu(&g.pixel_shuffle(&conv.forward(p, &x)?, 2)?, LEAKY_SLOPE)?;
        }
        Ok(self.out.forward(p, &x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcvsr_tensor::{Graph, ParamGroup, ParamStore, RngState};

    fn stage(variant: RecurrentVariant) -> (ParamStore, AlignedStage) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(1);
        let s = AlignedStage::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "prop", variant, 8, 2);
        (store, s)
    }

    #[test]
    fn input_widths_per_variant() {
        assert_eq!(stage(RecurrentVariant::Vanilla).1.conv_in.c_in, 3 + 8);
        assert_eq!(stage(RecurrentVariant::Motion).1.conv_in.c_in, 3 + 16);
        assert_eq!(stage(RecurrentVariant::Hybrid).1.conv_in.c_in, 3 + 24);
    }

    #[test]
    fn hybrid_boundary_reuses_other_side() {
        let (store, s) = stage(RecurrentVariant::Hybrid);
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let mut rng = RngState::new(2);
        let x = g.constant(Tensor::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng));
        let h = g.constant(Tensor::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng));
        let zero = g.constant(Tensor::zeros(&[1, 8, 8, 8]));
        let a = s.propagate(&p, &x, &zero, None, Some(&h)).unwrap();
        let b = s.propagate(&p, &x, &zero, Some(&h), Some(&h)).unwrap();
        assert_eq!(a.value(), b.value());
        assert_eq!(a.shape(), &[1, 8, 8, 8]);
        assert!(s.propagate(&p, &x, &g.constant(Tensor::zeros(&[1, 4, 8, 8])), None, Some(&h)).is_err());
    }

    #[test]
    fn reconstruct_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(3);
        let mut b = Builder::new(&mut store, &mut rng, ParamGroup::Main);
        let r4 = Reconstruct::build(&mut b, 8, 4).unwrap();
        let r2 = Reconstruct::build(&mut Builder::new(&mut ParamStore::<f32>::new(), &mut RngState::new(0), ParamGroup::Main), 8, 2).unwrap();
        assert!(Reconstruct::build(&mut b, 8, 3).is_err());
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let x = g.constant(Tensor::uniform(&[1, 8, 32, 32], 0.0, 1.0, &mut rng));
        assert_eq!(r4.forward(&p, &x).unwrap().shape(), &[1, 3, 128, 128]);
        assert_eq!(r2.ups.len(), 1);
    }
}
