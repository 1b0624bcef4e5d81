//! Coarse-to-fine flow estimation and bidirectional frame alignment.
//!
//! Flow convention: `warp(src, flow)(y, x) = src(y + flow_y, x + flow_x)`,
//! so `estimate_flow(ref, src)` predicts where each reference pixel lives
//! in the source frame.

use tcvsr_tensor::{Binding, Builder, Conv2d, Graph, Init, ParamGroup, ParamStore, Real, RngState, Tensor, Var, LEAKY_SLOPE};

use crate::error::{Error, Result};

/// Output widths of the per-level convolution stack; the input is
/// `ref (3) + warped src (3) + upsampled flow (2)`.
pub const LEVEL_WIDTHS: [usize; 5] = [24, 24, 16, 8, 2];
const LEVEL_INPUT: usize = 8;
/// Frames enter the pyramid as `(x - 0.5) * INPUT_GAIN`.
pub const INPUT_GAIN: f64 = 4.0;

/// Per-pixel displacement, `B×2×H×W` (x then y), in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub values: Tensor,
}

impl FlowField {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 4 || values.dim(1) != 2 {
            return Err(Error::Shape(format!("flow must be B×2×H×W, got {:?}", values.shape())));
        }
        if !values.all_finite() {
            return Err(Error::Data("flow has non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Constant field `(dx, dy)` everywhere.
    pub fn constant(batch: usize, h: usize, w: usize, dx: f32, dy: f32) -> Self {
        let mut t = Tensor::zeros(&[batch, 2, h, w]);
        let plane = h * w;
        for b in 0..batch {
            let d = t.data_mut();
            d[(2 * b) * plane..(2 * b + 1) * plane].fill(dx);
            d[(2 * b + 1) * plane..(2 * b + 2) * plane].fill(dy);
        }
        Self { values: t }
    }

    /// Mean `|flow|` over all pixels.
    pub fn mean_magnitude(&self) -> f64 {
        let (b, _, h, w) = dims4(&self.values);
        let d = self.values.data();
        let plane = h * w;
        let mut s = 0.0;
        for bi in 0..b {
            for i in 0..plane {
                let fx = d[2 * bi * plane + i] as f64;
                let fy = d[(2 * bi + 1) * plane + i] as f64;
                s += (fx * fx + fy * fy).sqrt();
            }
        }
        s / (b * plane) as f64
    }

    /// Mean endpoint error against a constant `(dx, dy)` over pixels at
    /// least `margin` from the border.
    pub fn endpoint_error(&self, dx: f64, dy: f64, margin: usize) -> f64 {
        let (b, _, h, w) = dims4(&self.values);
        let d = self.values.data();
        let plane = h * w;
        let (mut s, mut n) = (0.0, 0usize);
        for bi in 0..b {
            for y in margin..h.saturating_sub(margin) {
                for x in margin..w.saturating_sub(margin) {
                    let i = y * w + x;
                    let ex = d[2 * bi * plane + i] as f64 - dx;
                    let ey = d[(2 * bi + 1) * plane + i] as f64 - dy;
                    s += (ex * ex + ey * ey).sqrt();
                    n += 1;
                }
            }
        }
        s / n.max(1) as f64
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    (t.dim(0), t.dim(1), t.dim(2), t.dim(3))
}

/// One convolution stack per pyramid level, index 0 = full resolution.
#[derive(Clone, Debug)]
pub struct FlowPyramidParams {
    pub levels: Vec<Vec<Conv2d>>,
}

impl FlowPyramidParams {
    pub fn build<T: Real>(store: &mut ParamStore<T>, rng: &mut RngState, levels: usize) -> Self {
        let mut b = Builder::new(store, rng, ParamGroup::Flow);
        let levels = (0..levels)
            .map(|l| {
                let mut c_in = LEVEL_INPUT;
                LEVEL_WIDTHS
                    .iter()
                    .enumerate()
                    .map(|(j, &c_out)| {
                        let last = j + 1 == LEVEL_WIDTHS.len();
                        let init = if last { Init::Zero } else { Init::FanIn };
                        let conv = b.conv(&format!("flow.level{l}.conv{j}"), c_in, c_out, 3, init);
                        c_in = c_out;
                        conv
                    })
                    .collect()
            })
            .collect();
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Flow from `reference` into `src`, both `B×3×H×W`.
    pub fn estimate<T: Real>(&self, p: &Binding<'_, T>, reference: &Var<T>, src: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        if reference.shape() != src.shape() || reference.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "estimate_flow: ref {:?} vs src {:?}",
                reference.shape(),
                src.shape()
            )));
        }
        let (bsz, _, h, w) = (reference.shape()[0], reference.shape()[1], reference.shape()[2], reference.shape()[3]);
        let m = 1usize << (self.levels.len() - 1);
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "estimate_flow: {h}×{w} is not divisible by {m} for {} levels",
                self.levels.len()
            )));
        }
        // centre and stretch [0, 1] frames; raw intensity differences are
        // too small for the stack to learn matching from
        let norm = |v: &Var<T>| -> Result<Var<T>> {
            let offset = g.constant(Tensor::full(v.shape(), T::lit(-INPUT_GAIN / 2.0)));
            Ok(g.add(&g.scale(v, INPUT_GAIN)?, &offset)?)
        };
        let mut refs = vec![norm(reference)?];
        let mut srcs = vec![norm(src)?];
        for _ in 1..self.levels.len() {
            refs.push(g.avg_pool2(refs.last().unwrap())?);
            srcs.push(g.avg_pool2(srcs.last().unwrap())?);
        }
        let coarse = self.levels.len() - 1;
        let mut flow = g.constant(Tensor::zeros(&[bsz, 2, h / m, w / m]));
        for l in (0..=coarse).rev() {
            if l != coarse {
                flow = g.scale(&g.upsample2(&flow)?, 2.0)?;
            }
            let warped = g.warp(&srcs[l], &flow)?;
            let mut x = g.concat(&[&refs[l], &warped, &flow], 1)?;
            let stack = &self.levels[l];
            for (j, conv) in stack.iter().enumerate() {
                x = conv.forward(p, &x)?;
                if j + 1 < stack.len() {
                    x = g.leaky_relu(&x, LEAKY_SLOPE)?;
                }
            }
            flow = g.add(&flow, &x)?;
        }
        Ok(flow)
    }
}

/// Tensor-level convenience: flow for a single pair without recording.
pub fn estimate_flow(
    params: &FlowPyramidParams,
    store: &ParamStore,
    reference: &Tensor,
    src: &Tensor,
) -> Result<FlowField> {
    let g = Graph::inference();
    let p = Binding::new(&g, store);
    let batched = |t: &Tensor| -> Result<Var> {
        Ok(g.constant(match t.rank() {
            3 => t.clone().reshape(&[1, t.dim(0), t.dim(1), t.dim(2)])?,
            _ => t.clone(),
        }))
    };
    let f = params.estimate(&p, &batched(reference)?, &batched(src)?)?;
    FlowField::new(f.to_tensor())
}

/// Bilinear backward warp with border clamping.
pub fn warp(src: &Tensor, flow: &FlowField) -> Result<Tensor> {
    let g = Graph::inference();
    let s = match src.rank() {
        3 => src.clone().reshape(&[1, src.dim(0), src.dim(1), src.dim(2)])?,
        _ => src.clone(),
    };
    let out = g.warp(&g.constant(s), &g.constant(flow.values.clone()))?.to_tensor();
    Ok(if src.rank() == 3 { out.reshape(src.shape())? } else { out })
}

/// Flows and aligned neighbours for every frame of a clip. Each adjacent
/// pair is estimated once in each direction; later stages reuse the cache.
#[derive(Clone, Debug)]
pub struct Alignment<T: Real = f32> {
    /// `forward[i]`: flow of frame `i + 1` into frame `i`.
    pub forward: Vec<Var<T>>,
    /// `backward[i]`: flow of frame `i` into frame `i + 1`.
    pub backward: Vec<Var<T>>,
    /// `x_{i−1}` warped onto frame `i` (None at `i = 0` or when unused).
    pub h_prev: Vec<Option<Var<T>>>,
    /// `x_{i+1}` warped onto frame `i` (None at the last frame or when unused).
    pub h_next: Vec<Option<Var<T>>>,
}

/// Align every frame of `frames` (each `B×3×H×W`) to its neighbours. With
/// `want_next == false` only forward flows are estimated.
pub fn align_sequence<T: Real>(
    params: &FlowPyramidParams,
    p: &Binding<'_, T>,
    frames: &[Var<T>],
    want_prev: bool,
    want_next: bool,
) -> Result<Alignment<T>> {
    let g = p.graph();
    let t = frames.len();
    let pairs = t.saturating_sub(1);
    let mut out = Alignment {
        forward: Vec::new(),
        backward: Vec::new(),
        h_prev: vec![None; t],
        h_next: vec![None; t],
    };
    if pairs == 0 || !(want_prev || want_next) {
        return Ok(out);
    }
    // every pair in both requested directions goes through one estimator call
    let mut refs: Vec<&Var<T>> = Vec::new();
    let mut srcs: Vec<&Var<T>> = Vec::new();
    if want_prev {
        for i in 0..pairs {
            refs.push(&frames[i + 1]);
            srcs.push(&frames[i]);
        }
    }
    if want_next {
        for i in 0..pairs {
            refs.push(&frames[i]);
            srcs.push(&frames[i + 1]);
        }
    }
    let r = g.concat(&refs, 0)?;
    let s = g.concat(&srcs, 0)?;
    let flows = params.estimate(p, &r, &s)?;
    let warped = g.warp(&s, &flows)?;
    let b = frames[0].shape()[0];
    let mut slot = 0;
    let take = |v: &Var<T>, k: usize| g.narrow(v, 0, k * b, b);
    if want_prev {
        for i in 0..pairs {
            out.forward.push(take(&flows, slot)?);
            out.h_prev[i + 1] = Some(take(&warped, slot)?);
            slot += 1;
        }
    }
    if want_next {
        for i in 0..pairs {
            out.backward.push(take(&flows, slot)?);
            out.h_next[i] = Some(take(&warped, slot)?);
            slot += 1;
        }
    }
    Ok(out)
}

/// Align one frame to whichever neighbours exist.
pub fn align_bidirectional<T: Real>(
    params: &FlowPyramidParams,
    p: &Binding<'_, T>,
    x_prev: Option<&Var<T>>,
    x_cur: &Var<T>,
    x_next: Option<&Var<T>>,
) -> Result<(Option<Var<T>>, Option<Var<T>>)> {
    if x_prev.is_none() && x_next.is_none() {
        return Err(Error::Usage("align_bidirectional needs at least one neighbour".into()));
    }
    let g = p.graph();
    let one = |n: Option<&Var<T>>| -> Result<Option<Var<T>>> {
        n.map(|src| {
            let f = params.estimate(p, x_cur, src)?;
            Ok(g.warp(src, &f)?)
        })
        .transpose()
    };
    Ok((one(x_prev)?, one(x_next)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(levels: usize) -> (ParamStore, FlowPyramidParams) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(1);
        let params = FlowPyramidParams::build(&mut store, &mut rng, levels);
        (store, params)
    }

    #[test]
    fn zero_init_gives_zero_flow_and_identity_alignment() {
        let (store, params) = setup(3);
        let mut rng = RngState::new(2);
        let a = Tensor::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let f = estimate_flow(&params, &store, &a, &b).unwrap();
        assert!(f.values.data().iter().all(|&v| v == 0.0));

        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let (xa, xb, xc) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(a.clone()));
        let (hp, hn) = align_bidirectional(&params, &p, Some(&xa), &xb, Some(&xc)).unwrap();
        assert_eq!(hp.unwrap().value(), &a);
        assert_eq!(hn.unwrap().value(), &a);
    }

    #[test]
    fn rejects_indivisible_and_mismatched() {
        let (store, params) = setup(3);
        assert!(estimate_flow(&params, &store, &Tensor::zeros(&[1, 3, 10, 16]), &Tensor::zeros(&[1, 3, 10, 16])).is_err());
        assert!(estimate_flow(&params, &store, &Tensor::zeros(&[1, 3, 16, 16]), &Tensor::zeros(&[1, 3, 8, 16])).is_err());
    }

    #[test]
    fn first_frame_is_unidirectional() {
        let (store, params) = setup(2);
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let frames: Vec<Var> = (0..3).map(|i| g.constant(Tensor::full(&[1, 3, 8, 8], i as f32 * 0.1))).collect();
        let al = align_sequence(&params, &p, &frames, true, true).unwrap();
        assert!(al.h_prev[0].is_none() && al.h_next[0].is_some());
        assert!(al.h_prev[2].is_some() && al.h_next[2].is_none());
        assert_eq!(al.forward.len(), 2);
        assert!(align_bidirectional(&params, &p, None, &frames[0], None).is_err());
    }

    #[test]
    fn batched_alignment_matches_per_pair() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(5);
        let params = FlowPyramidParams::build(&mut store, &mut rng, 2);
        // give the last layers weight so flows are non-trivial
        for prm in store.iter_mut() {
            if prm.value.data().iter().all(|&v| v == 0.0) && prm.name.ends_with("weight") {
                prm.value = Tensor::uniform(prm.value.shape(), -0.05, 0.05, &mut rng);
            }
        }
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let frames: Vec<Var> = (0..3).map(|_| g.constant(Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng))).collect();
        let al = align_sequence(&params, &p, &frames, true, true).unwrap();
        let (hp, hn) = align_bidirectional(&params, &p, Some(&frames[0]), &frames[1], Some(&frames[2])).unwrap();
        assert!(al.h_prev[1].as_ref().unwrap().value().max_abs_diff(hp.unwrap().value()) < 1e-6);
        assert!(al.h_next[1].as_ref().unwrap().value().max_abs_diff(hn.unwrap().value()) < 1e-6);
    }

    #[test]
    fn endpoint_error_of_exact_field() {
        let f = FlowField::constant(1, 8, 8, 3.0, 0.0);
        assert_eq!(f.endpoint_error(3.0, 0.0, 1), 0.0);
        assert!((f.mean_magnitude() - 3.0).abs() < 1e-12);
    }
}
