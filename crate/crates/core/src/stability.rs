//! Spatial correlative matching (position + channel attention) and temporal
//! self-alignment over 3D patch tokens.
//!
//! Multi-frame features use a frame-major batch layout: a clip of `T`
//! frames with batch `B` is one `(T·B)×C×H×W` tensor, frame `t` of sample
//! `b` at row `t·B + b`.

use tcvsr_tensor::{Binding, Builder, Conv2d, Graph, Init, Linear, ParamId, Real, Tensor, Var, LEAKY_SLOPE};

use crate::error::{Error, Result};

/// Patch extents and the clip shape they tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid3D {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub t_p: usize,
    pub h_p: usize,
    pub w_p: usize,
}

// [n_t, t_p, B, C, n_h, h_p, n_w, w_p] -> [B, n_t, n_h, n_w, t_p, h_p, w_p, C]
const EMBED_PERM: [usize; 8] = [2, 0, 4, 6, 1, 5, 7, 3];
const FOLD_PERM: [usize; 8] = [1, 4, 0, 7, 2, 5, 3, 6];

impl PatchGrid3D {
    pub fn new(t: usize, c: usize, h: usize, w: usize, t_p: usize, h_p: usize, w_p: usize) -> Result<Self> {
        if [t, c, h, w, t_p, h_p, w_p].contains(&0) {
            return Err(Error::Shape("patch grid dimensions must be positive".into()));
        }
        if t % t_p != 0 || h % h_p != 0 || w % w_p != 0 {
            return Err(Error::Shape(format!(
                "{t}×{h}×{w} is not divisible by patch {t_p}×{h_p}×{w_p}"
            )));
        }
        Ok(Self { t, c, h, w, t_p, h_p, w_p })
    }

    pub fn n_t(&self) -> usize {
        self.t / self.t_p
    }

    pub fn n_h(&self) -> usize {
        self.h / self.h_p
    }

    pub fn n_w(&self) -> usize {
        self.w / self.w_p
    }

    /// Token count.
    pub fn n(&self) -> usize {
        self.n_t() * self.n_h() * self.n_w()
    }

    /// Token width.
    pub fn d(&self) -> usize {
        self.t_p * self.h_p * self.w_p * self.c
    }

    fn split_shape(&self, b: usize) -> [usize; 8] {
        [self.n_t(), self.t_p, b, self.c, self.n_h(), self.h_p, self.n_w(), self.w_p]
    }

    /// `(T·B)×C×H×W` → `B×N×d`.
    pub fn embed<T: Real>(&self, g: &Graph<T>, x: &Var<T>, b: usize) -> Result<Var<T>> {
        let want = [self.t * b, self.c, self.h, self.w];
        if x.shape() != want {
            return Err(Error::Shape(format!("embed: expected {:?}, got {:?}", want, x.shape())));
        }
        let x = g.reshape(x, &self.split_shape(b))?;
        let x = g.permute(&x, &EMBED_PERM)?;
        Ok(g.reshape(&x, &[b, self.n(), self.d()])?)
    }

    /// Inverse of [`PatchGrid3D::embed`].
    pub fn fold<T: Real>(&self, g: &Graph<T>, tokens: &Var<T>, b: usize) -> Result<Var<T>> {
        let want = [b, self.n(), self.d()];
        if tokens.shape() != want {
            return Err(Error::Shape(format!("fold: expected {:?}, got {:?}", want, tokens.shape())));
        }
        let s = self.split_shape(b);
        let x = g.reshape(
            tokens,
            &[s[2], s[0], s[4], s[6], s[1], s[5], s[7], s[3]],
        )?;
        let x = g.permute(&x, &FOLD_PERM)?;
        Ok(g.reshape(&x, &[self.t * b, self.c, self.h, self.w])?)
    }
}

/// `T×C×H×W` → `N×d`, row `k` holding the `(t_p, h_p, w_p, C)` block of
/// grid cell `k` (time-major, then row-major space).
pub fn embed_3d_patches<T: Real>(x: &Tensor<T>, grid: &PatchGrid3D) -> Result<Tensor<T>> {
    let g = Graph::inference();
    let v = grid.embed(&g, &g.constant(x.clone()), 1)?;
    Ok(v.to_tensor().reshape(&[grid.n(), grid.d()])?)
}

/// `N×d` → `T×C×H×W`.
pub fn fold_3d_patches<T: Real>(tokens: &Tensor<T>, grid: &PatchGrid3D) -> Result<Tensor<T>> {
    let g = Graph::inference();
    let t = tokens.clone().reshape(&[1, grid.n(), grid.d()])?;
    Ok(grid.fold(&g, &g.constant(t), 1)?.to_tensor())
}

fn batched<T: Real>(g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
    match x.shape().len() {
        2 => Ok(g.reshape(x, &[1, x.shape()[0], x.shape()[1]])?),
        3 => Ok(x.clone()),
        _ => Err(Error::Shape(format!("expected N×d or B×N×d, got {:?}", x.shape()))),
    }
}

/// `softmax(Q·Kᵀ/√d_e)·V` for `N×d_e` (or batched `B×N×d_e`) inputs.
pub fn self_attention<T: Real>(g: &Graph<T>, q: &Var<T>, k: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
    let rank = q.shape().len();
    let d_e = *q.shape().last().unwrap_or(&1);
    let y = g.attention(&batched(g, q)?, &batched(g, k)?, &batched(g, v)?, 1.0 / (d_e as f64).sqrt())?;
    if rank == 2 {
        Ok(g.reshape(&y, &[y.shape()[1], y.shape()[2]])?)
    } else {
        Ok(y)
    }
}

/// The `N×N` (or `B×N×N`) map `softmax(scale·Q·Kᵀ)`.
pub fn attention_map<T: Real>(q: &Tensor<T>, k: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let rank = q.rank();
    let g = Graph::inference();
    let (q, k) = (batched(&g, &g.constant(q.clone()))?, batched(&g, &g.constant(k.clone()))?);
    let (b, n, m) = (q.shape()[0], q.shape()[1], k.shape()[1]);
    let mut maps = Vec::with_capacity(b);
    for i in 0..b {
        let qi = g.reshape(&g.narrow(&q, 0, i, 1)?, &q.shape()[1..])?;
        let ki = g.reshape(&g.narrow(&k, 0, i, 1)?, &k.shape()[1..])?;
        let logits = g.scale(&g.matmul(&qi, &g.permute(&ki, &[1, 0])?)?, scale)?;
        maps.push(g.softmax_rows(&logits)?.to_tensor().reshape(&[1, n, m])?);
    }
    let refs: Vec<&Tensor<T>> = maps.iter().collect();
    let out = Tensor::concat(&refs, 0)?;
    Ok(if rank == 2 { out.reshape(&[n, m])? } else { out })
}

/// Position attention, channel attention and the fusing convolution.
#[derive(Clone, Debug)]
pub struct CmbParams {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    /// Scalar gate of the channel-attention residual, starts at zero.
    pub gamma: ParamId,
    pub out: Conv2d,
}

impl CmbParams {
    pub fn build<T: Real, R: rand::Rng>(b: &mut Builder<'_, T, R>, name: &str, channels: usize) -> Self {
        let cq = (channels / 8).max(1);
        Self {
            query: b.conv(&format!("{name}.pam.query"), channels, cq, 1, Init::FanIn),
            key: b.conv(&format!("{name}.pam.key"), channels, cq, 1, Init::FanIn),
            value: b.conv(&format!("{name}.pam.value"), channels, channels, 1, Init::FanIn),
            gamma: b.tensor(&format!("{name}.cam.gamma"), &[1], 1, Init::Zero),
            out: b.conv(&format!("{name}.out"), 2 * channels, channels, 3, Init::FanIn),
        }
    }

    fn check<T: Real>(&self, x: &Var<T>) -> Result<(usize, usize, usize, usize)> {
        match *x.shape() {
            [b, c, h, w] if c == self.value.c_in => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!(
                "cmb: input {:?} for a {}-channel block",
                x.shape(),
                self.value.c_in
            ))),
        }
    }

    fn pam_qkv<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<[Var<T>; 3]> {
        let g = p.graph();
        let (b, _, h, w) = self.check(x)?;
        let tokens = |conv: &Conv2d| -> Result<Var<T>> {
            let y = conv.forward(p, x)?;
            let y = g.reshape(&y, &[b, conv.c_out, h * w])?;
            Ok(g.permute(&y, &[0, 2, 1])?)
        };
        Ok([tokens(&self.query)?, tokens(&self.key)?, tokens(&self.value)?])
    }

    /// Position attention over the `H·W` positions; no residual.
    pub fn pam<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        let (b, c, h, w) = self.check(x)?;
        let [q, k, v] = self.pam_qkv(p, x)?;
        let y = g.attention(&q, &k, &v, 1.0 / (self.query.c_out as f64).sqrt())?;
        let y = g.permute(&y, &[0, 2, 1])?;
        Ok(g.reshape(&y, &[b, c, h, w])?)
    }

    /// The `B×HW×HW` position-attention map, for inspection.
    pub fn pam_map<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Tensor<T>> {
        let [q, k, _] = self.pam_qkv(p, x)?;
        attention_map(q.value(), k.value(), 1.0 / (self.query.c_out as f64).sqrt())
    }

    /// `γ·softmax(X·Xᵀ/√(HW))·X + X` over channels.
    pub fn cam<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        let (b, c, h, w) = self.check(x)?;
        let flat = g.reshape(x, &[b, c, h * w])?;
        let y = g.attention(&flat, &flat, &flat, 1.0 / ((h * w) as f64).sqrt())?;
        let y = g.reshape(&y, &[b, c, h, w])?;
        let y = g.mul_scalar(&y, &p.var(self.gamma))?;
        Ok(g.add(&y, x)?)
    }

    /// `Conv(cat(x, PAM(x) + CAM(x)))`.
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        let att = g.add(&self.pam(p, x)?, &self.cam(p, x)?)?;
        Ok(self.out.forward(p, &g.concat(&[x, &att], 1)?)?)
    }
}

/// One temporal self-alignment block.
#[derive(Clone, Debug)]
pub struct TsbParams {
    pub pre: [Conv2d; 3],
    /// `d → d_e` for full 3D patches.
    pub embed: Linear,
    /// `d_e → d`, zero-initialised.
    pub unembed: Linear,
    /// Projections for 2D patches (`t_p = 1`) used by trailing frames.
    pub embed2d: Linear,
    pub unembed2d: Linear,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub channels: usize,
    pub patch: usize,
    pub token_dim: usize,
}

impl TsbParams {
    pub fn build<T: Real, R: rand::Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        patch: usize,
        token_dim: usize,
    ) -> Self {
        let d3 = patch * patch * patch * channels;
        let d2 = patch * patch * channels;
        let pre = [0, 1, 2].map(|i| b.conv(&format!("{name}.pre{i}"), channels, channels, 3, Init::FanIn));
        Self {
            pre,
            embed: b.linear(&format!("{name}.embed3d"), d3, token_dim, Init::FanIn),
            unembed: b.linear(&format!("{name}.unembed3d"), token_dim, d3, Init::Zero),
            embed2d: b.linear(&format!("{name}.embed2d"), d2, token_dim, Init::FanIn),
            unembed2d: b.linear(&format!("{name}.unembed2d"), token_dim, d2, Init::Zero),
            w_q: b.linear(&format!("{name}.query"), token_dim, token_dim, Init::FanIn),
            w_k: b.linear(&format!("{name}.key"), token_dim, token_dim, Init::FanIn),
            w_v: b.linear(&format!("{name}.value"), token_dim, token_dim, Init::FanIn),
            channels,
            patch,
            token_dim,
        }
    }

    /// Three convolutions with leaky ReLU between them, frame by frame.
    pub fn preprocess<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = p.graph();
        let mut h = self.pre[0].forward(p, x)?;
        for conv in &self.pre[1..] {
            h = g.leaky_relu(&h, LEAKY_SLOPE)?;
            h = conv.forward(p, &h)?;
        }
        Ok(h)
    }

    /// Attention over one group's tokens (`B×N×d`); returns `B×N×d`.
    fn attend<T: Real>(&self, p: &Binding<'_, T>, tokens: &Var<T>, full: bool) -> Result<Var<T>> {
        let g = p.graph();
        let (b, n, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
        let (inp, outp) = if full { (&self.embed, &self.unembed) } else { (&self.embed2d, &self.unembed2d) };
        let rows = g.reshape(tokens, &[b * n, d])?;
        let e = inp.forward(p, &rows)?;
        let proj = |l: &Linear| -> Result<Var<T>> { Ok(g.reshape(&l.forward(p, &e)?, &[b, n, self.token_dim])?) };
        let y = self_attention(g, &proj(&self.w_q)?, &proj(&self.w_k)?, &proj(&self.w_v)?)?;
        let y = outp.forward(p, &g.reshape(&y, &[b * n, self.token_dim])?)?;
        Ok(g.reshape(&y, &[b, n, d])?)
    }

    /// Groups of `patch` consecutive frames; trailing frames that do not
    /// fill a group form one group of 2D patches.
    pub fn groups(&self, t: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let full = t / self.patch;
        for i in 0..full {
            out.push((i * self.patch, self.patch, self.patch));
        }
        if t % self.patch != 0 {
            out.push((full * self.patch, t % self.patch, 1));
        }
        out
    }

    /// `x`: `(T·B)×C×H×W`; output has the same shape.
    pub fn forward<T: Real>(&self, p: &Binding<'_, T>, x: &Var<T>, t: usize, b: usize) -> Result<Var<T>> {
        let g = p.graph();
        let (c, h, w) = match *x.shape() {
            [n, c, h, w] if n == t * b && c == self.channels => (c, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "tsb: input {:?} for {} frames × batch {} × {} channels",
                    x.shape(),
                    t,
                    b,
                    self.channels
                )))
            }
        };
        let pre = self.preprocess(p, x)?;
        let mut outs = Vec::new();
        for (start, len, t_p) in self.groups(t) {
            let grid = PatchGrid3D::new(len, c, h, w, t_p, self.patch, self.patch)?;
            let part = g.narrow(&pre, 0, start * b, len * b)?;
            let tokens = grid.embed(g, &part, b)?;
            let y = self.attend(p, &tokens, t_p == self.patch)?;
            outs.push(g.add(&part, &grid.fold(g, &y, b)?)?);
        }
        let refs: Vec<&Var<T>> = outs.iter().collect();
        Ok(g.concat(&refs, 0)?)
    }
}

/// CMB stack per frame and TSB stack per group, run side by side. Empty
/// stacks pass their input through.
pub fn stability_forward<T: Real>(
    p: &Binding<'_, T>,
    x: &Var<T>,
    t: usize,
    b: usize,
    cmb: &[CmbParams],
    tsb: &[TsbParams],
) -> Result<(Var<T>, Var<T>)> {
    let cm = cmb.iter().try_fold(x.clone(), |h, blk| blk.forward(p, &h))?;
    let sa = tsb.iter().try_fold(x.clone(), |h, blk| blk.forward(p, &h, t, b))?;
    Ok((cm, sa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcvsr_tensor::{ParamGroup, ParamStore, RngState};

    #[test]
    fn grid_counts() {
        let g = PatchGrid3D::new(8, 64, 64, 64, 8, 8, 8).unwrap();
        assert_eq!((g.n(), g.d()), (64, 32768));
        let g = PatchGrid3D::new(4, 2, 4, 4, 2, 2, 2).unwrap();
        assert_eq!((g.n(), g.d()), (8, 16));
        assert!(PatchGrid3D::new(4, 2, 6, 4, 2, 4, 2).is_err());
    }

    #[test]
    fn embed_layout_and_round_trip() {
        let grid = PatchGrid3D::new(4, 2, 4, 4, 2, 2, 2).unwrap();
        let x = Tensor::<f64>::new(&[4, 2, 4, 4], (0..128).map(|v| v as f64).collect()).unwrap();
        let tok = embed_3d_patches(&x, &grid).unwrap();
        // token 0: t∈{0,1}, y∈{0,1}, x∈{0,1}, channels innermost
        let expect: Vec<f64> = (0..2)
            .flat_map(|t| (0..2).flat_map(move |y| (0..2).flat_map(move |xx| (0..2).map(move |c| (((t * 2 + c) * 4 + y) * 4 + xx) as f64))))
            .collect();
        assert_eq!(&tok.data()[..16], &expect[..]);
        // token 1 is the next cell along width
        assert_eq!(tok.at(&[1, 0]), x.at(&[0, 0, 0, 2]));
        assert_eq!(fold_3d_patches(&tok, &grid).unwrap(), x);
    }

    #[test]
    fn single_token_attention_returns_v() {
        let g = Graph::<f64>::inference();
        let mut rng = RngState::new(1);
        let q = g.constant(Tensor::uniform(&[1, 5], -1.0, 1.0, &mut rng));
        let k = g.constant(Tensor::uniform(&[1, 5], -1.0, 1.0, &mut rng));
        let v = g.constant(Tensor::uniform(&[1, 5], -1.0, 1.0, &mut rng));
        let y = self_attention(&g, &q, &k, &v).unwrap();
        assert!(y.value().max_abs_diff(v.value()) < 1e-15);
    }

    #[test]
    fn cmb_shapes_and_uniform_pam_on_constant_input() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(3);
        let blk = CmbParams::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "cmb", 16);
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let x = g.constant(Tensor::full(&[1, 16, 6, 6], 0.3));
        let map = blk.pam_map(&p, &x).unwrap();
        assert!(map.data().iter().all(|&m| (m - 1.0 / 36.0).abs() < 1e-6));
        let y = blk.forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[1, 16, 6, 6]);
        assert!(blk.forward(&p, &g.constant(Tensor::zeros(&[1, 8, 6, 6]))).is_err());
    }

    #[test]
    fn tsb_groups_and_dead_value_branch() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(4);
        let blk = TsbParams::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "tsb", 4, 4, 8);
        assert_eq!(blk.groups(4), vec![(0, 4, 4)]);
        assert_eq!(blk.groups(6), vec![(0, 4, 4), (4, 2, 1)]);
        assert_eq!(blk.groups(3), vec![(0, 3, 1)]);
        let g = Graph::inference();
        let p = Binding::new(&g, &store);
        let x = g.constant(Tensor::uniform(&[6 * 2, 4, 8, 8], 0.0, 1.0, &mut rng));
        let y = blk.forward(&p, &x, 6, 2).unwrap();
        // the output projection starts at zero, so only the residual remains
        let pre = blk.preprocess(&p, &x).unwrap();
        assert_eq!(y.value(), pre.value());
    }
}
