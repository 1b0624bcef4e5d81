//! Finite-difference gradient checks for every differentiable building
//! block and for the whole network at a tiny size, all in `f64`.

use std::time::Instant;

use tcvsr_tensor::{
    grad_check, Binding, Builder, GradCheckReport, Graph, PaddingMode, ParamGroup, ParamId, ParamStore, RngState,
    Tensor, Var,
};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion::Pyramid;
use crate::model::Network;
use crate::propagation::Reconstruct;
use crate::stability::{self_attention, CmbParams, TsbParams};

/// Relative-error threshold for every case.
pub const GRAD_TOL: f64 = 1e-4;

/// Case names in suite order.
pub const CASES: [&str; 13] = [
    "conv2d",
    "conv_transpose2d",
    "matmul",
    "softmax_rows",
    "resblock",
    "warp",
    "cmb_forward",
    "self_attention",
    "tsb_forward",
    "pyramid_fuse",
    "charbonnier",
    "reconstruct",
    "pipeline",
];

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.passed(GRAD_TOL)
    }
}

fn rnd(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Give zero-initialised parameters small random values so every path
/// carries gradient (a zero gate or zero flow would hide whole branches).
pub fn activate_zero_params<T: tcvsr_tensor::Real>(store: &mut ParamStore<T>, rng: &mut RngState, scale: f64) {
    for p in store.iter_mut() {
        if p.value.data().iter().all(|&v| v == T::zero()) {
            p.value = Tensor::uniform(p.value.shape(), -scale, scale, rng);
        }
    }
}

type Forward<'a> = Box<dyn Fn(&Graph<f64>, &[Var<f64>]) -> tcvsr_tensor::Result<Var<f64>> + 'a>;

fn tensor_err(e: Error) -> tcvsr_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => tcvsr_tensor::TensorError::Invalid {
            op: "grad check",
            detail: other.to_string(),
        },
    }
}

/// Bind `params` to `vars[first..]` and run `f` against the store.
fn with_params<'a>(
    store: &'a ParamStore<f64>,
    params: Vec<ParamId>,
    first: usize,
    f: impl Fn(&Binding<'_, f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a,
) -> Forward<'a> {
    Box::new(move |g, v| {
        let p = Binding::new(g, store);
        for (k, id) in params.iter().enumerate() {
            p.bind(*id, v[first + k].clone())?;
        }
        f(&p, v).map_err(tensor_err)
    })
}

fn values(store: &ParamStore<f64>, ids: &[ParamId]) -> Vec<Tensor<f64>> {
    ids.iter().map(|&id| store.get(id).value.clone()).collect()
}

fn flat(g: &Graph<f64>, parts: &[Var<f64>]) -> tcvsr_tensor::Result<Var<f64>> {
    let flats = parts
        .iter()
        .map(|v| g.reshape(v, &[v.value().len()]))
        .collect::<tcvsr_tensor::Result<Vec<_>>>()?;
    g.concat(&flats.iter().collect::<Vec<_>>(), 0)
}

/// The tiny network configuration used by the composed check.
pub fn tiny_pipeline_config() -> ModelConfig {
    let mut c = ModelConfig::toy();
    c.channels = 4;
    c.resblocks = 1;
    c.cmb_blocks = 1;
    c.tsb_blocks = 1;
    c.patch3d = 4;
    c.token_dim = 8;
    c
}

/// Run one named case.
pub fn run_case(name: &str, seed: u64) -> Result<CaseResult> {
    let start = Instant::now();
    let mut rng = RngState::new(seed);
    let report = match name {
        "conv2d" => {
            let inputs = vec![
                rnd(&[2, 3, 5, 5], -1.0, 1.0, &mut rng),
                rnd(&[4, 3, 3, 3], -0.5, 0.5, &mut rng),
                rnd(&[4], -0.5, 0.5, &mut rng),
            ];
            grad_check(
                |g, v| {
                    let a = g.conv2d(&v[0], &v[1], Some(&v[2]), 1, 1, PaddingMode::Zero)?;
                    let b = g.conv2d(&v[0], &v[1], Some(&v[2]), 2, 1, PaddingMode::Replicate)?;
                    flat(g, &[a, b])
                },
                &inputs,
                seed,
            )?
        }
        "conv_transpose2d" => {
            let inputs = vec![
                rnd(&[1, 3, 4, 4], -1.0, 1.0, &mut rng),
                rnd(&[3, 2, 2, 2], -0.5, 0.5, &mut rng),
                rnd(&[3, 2, 4, 4], -0.5, 0.5, &mut rng),
                rnd(&[2], -0.5, 0.5, &mut rng),
            ];
            grad_check(
                |g, v| {
                    let a = g.conv_transpose2d(&v[0], &v[1], Some(&v[3]), 2, 0)?;
                    let b = g.conv_transpose2d(&v[0], &v[2], Some(&v[3]), 2, 1)?;
                    flat(g, &[a, b])
                },
                &inputs,
                seed,
            )?
        }
        "matmul" => {
            let inputs = vec![rnd(&[3, 4], -1.0, 1.0, &mut rng), rnd(&[4, 5], -1.0, 1.0, &mut rng)];
            grad_check(|g, v| g.matmul(&v[0], &v[1]), &inputs, seed)?
        }
        "softmax_rows" => {
            let inputs = vec![rnd(&[4, 6], -3.0, 3.0, &mut rng)];
            grad_check(|g, v| g.softmax_rows(&v[0]), &inputs, seed)?
        }
        "resblock" => {
            let mut store = ParamStore::<f64>::new();
            let block = Builder::new(&mut store, &mut rng, ParamGroup::Main).resblock("rb", 3);
            activate_zero_params(&mut store, &mut rng, 0.3);
            let ids = vec![block.conv1.weight, block.conv2.weight, block.conv2.bias];
            let mut inputs = vec![rnd(&[2, 3, 5, 5], -1.0, 1.0, &mut rng)];
            inputs.extend(values(&store, &ids));
            let f = with_params(&store, ids, 1, move |p, v| Ok(block.forward(p, &v[0])?));
            grad_check(f, &inputs, seed)?
        }
        "warp" => {
            let inputs = vec![rnd(&[1, 2, 6, 6], 0.0, 1.0, &mut rng), rnd(&[1, 2, 6, 6], -2.0, 2.0, &mut rng)];
            grad_check(|g, v| g.warp(&v[0], &v[1]), &inputs, seed)?
        }
        "cmb_forward" => {
            let mut store = ParamStore::<f64>::new();
            let cmb = CmbParams::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "cmb", 4);
            activate_zero_params(&mut store, &mut rng, 0.5);
            let ids = vec![cmb.gamma, cmb.query.weight, cmb.value.weight];
            let mut inputs = vec![rnd(&[2, 4, 3, 3], -1.0, 1.0, &mut rng)];
            inputs.extend(values(&store, &ids));
            let f = with_params(&store, ids, 1, move |p, v| cmb.forward(p, &v[0]));
            grad_check(f, &inputs, seed)?
        }
        "self_attention" => {
            let inputs = vec![
                rnd(&[2, 5, 3], -1.0, 1.0, &mut rng),
                rnd(&[2, 5, 3], -1.0, 1.0, &mut rng),
                rnd(&[2, 5, 3], -1.0, 1.0, &mut rng),
            ];
            grad_check(
                |g, v| self_attention(g, &v[0], &v[1], &v[2]).map_err(tensor_err),
                &inputs,
                seed,
            )?
        }
        "tsb_forward" => {
            // three frames with patch 2: one 3D group plus a 2D remainder
            let mut store = ParamStore::<f64>::new();
            let tsb = TsbParams::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "tsb", 2, 2, 4);
            activate_zero_params(&mut store, &mut rng, 0.3);
            let ids = vec![tsb.w_q.weight, tsb.unembed.weight, tsb.unembed2d.weight];
            let mut inputs = vec![rnd(&[3, 2, 4, 4], -1.0, 1.0, &mut rng)];
            inputs.extend(values(&store, &ids));
            let f = with_params(&store, ids, 1, move |p, v| tsb.forward(p, &v[0], 3, 1));
            grad_check(f, &inputs, seed)?
        }
        "pyramid_fuse" => {
            let mut store = ParamStore::<f64>::new();
            let pyr = Pyramid::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), "pyr", 2, 3, 3);
            activate_zero_params(&mut store, &mut rng, 0.3);
            let ids = vec![pyr.proj.weight];
            let mut inputs = vec![rnd(&[1, 2, 8, 8], -1.0, 1.0, &mut rng), rnd(&[1, 2, 8, 8], -1.0, 1.0, &mut rng)];
            inputs.extend(values(&store, &ids));
            let f = with_params(&store, ids, 2, move |p, v| pyr.forward(p, &v[0], &v[1]));
            grad_check(f, &inputs, seed)?
        }
        "charbonnier" => {
            let inputs = vec![rnd(&[2, 3, 4, 4], 0.0, 1.0, &mut rng), rnd(&[2, 3, 4, 4], 0.0, 1.0, &mut rng)];
            grad_check(|g, v| g.charbonnier(&v[0], &v[1], 1e-3), &inputs, seed)?
        }
        "reconstruct" => {
            let mut store = ParamStore::<f64>::new();
            let rec = Reconstruct::build(&mut Builder::new(&mut store, &mut rng, ParamGroup::Main), 4, 4)?;
            activate_zero_params(&mut store, &mut rng, 0.3);
            let ids = vec![rec.out.weight, rec.ups[0].bias];
            let mut inputs = vec![rnd(&[1, 4, 3, 3], -1.0, 1.0, &mut rng)];
            inputs.extend(values(&store, &ids));
            let f = with_params(&store, ids, 1, move |p, v| rec.forward(p, &v[0]));
            grad_check(f, &inputs, seed)?
        }
        "pipeline" => pipeline_check(seed, &mut rng)?,
        other => return Err(Error::Usage(format!("unknown gradient check {other:?}"))),
    };
    Ok(CaseResult {
        name: CASES.iter().find(|c| **c == name).copied().unwrap_or("?"),
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Frames (T=4, H=W=8) and one parameter from each stage through the full
/// network. Returns the combined report.
fn pipeline_check(seed: u64, rng: &mut RngState) -> Result<GradCheckReport> {
    let config = tiny_pipeline_config();
    let mut store = ParamStore::<f64>::new();
    let net = Network::build(&config, &mut store, rng)?;
    activate_zero_params(&mut store, rng, 0.2);
    let pick = |name: &str| -> Result<ParamId> {
        store
            .id(name)
            .ok_or_else(|| Error::Usage(format!("pipeline check: no parameter {name}")))
    };
    let ids = vec![
        pick("flow.level0.conv4.weight")?,
        pick("propagation.conv_in.bias")?,
        pick("cmb0.cam.gamma")?,
        pick("tsb0.query.weight")?,
        pick("fusion.stage2.proj.bias")?,
        pick("refine.conv_in.bias")?,
        pick("reconstruct.out.weight")?,
    ];
    let (t, h, w) = (4, 8, 8);
    let mut inputs = vec![rnd(&[t, 3, h, w], 0.0, 1.0, rng)];
    inputs.extend(values(&store, &ids));
    let f = with_params(&store, ids, 1, move |p, v| {
        let g = p.graph();
        let frames = (0..t).map(|i| Ok(g.narrow(&v[0], 0, i, 1)?)).collect::<Result<Vec<_>>>()?;
        Ok(net.forward(p, &frames)?.sr)
    });
    Ok(grad_check(f, &inputs, seed)?)
}

/// Every case in [`CASES`] order.
pub fn grad_suite(seed: u64) -> Result<Vec<CaseResult>> {
    CASES.iter().map(|c| run_case(c, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_case_is_rejected() {
        assert!(run_case("nope", 0).is_err());
    }

    #[test]
    fn activation_fills_only_zero_tensors() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let rb = Builder::new(&mut store, &mut rng, ParamGroup::Main).resblock("rb", 2);
        let before = store.get(rb.conv1.weight).value.clone();
        activate_zero_params(&mut store, &mut rng, 0.1);
        assert_eq!(store.get(rb.conv1.weight).value, before);
        assert!(store.get(rb.conv2.weight).value.data().iter().any(|&v| v != 0.0));
    }
}
