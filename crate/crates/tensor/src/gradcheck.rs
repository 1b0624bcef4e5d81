//! Finite-difference verification of reverse-mode gradients.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smaller steps tried when an entry disagrees at [`FD_STEP`]. Piecewise
/// linear ops (leaky ReLU, bilinear sampling) have kinks; in a deep
/// composition a ±1e-5 probe can straddle one and the central difference
/// then averages two slopes. Shrinking the step moves the probe off the
/// kink while the analytic value stays fixed.
pub const FD_RETRY_STEPS: [f64; 2] = [1e-6, 1e-7];

/// Entries whose error at [`FD_STEP`] exceeds this are retried.
pub const RETRY_ABOVE: f64 = 1e-6;

/// Denominator floor of the relative error, so entries whose true gradient
/// is near zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
    /// Entries that needed a smaller step.
    pub retried: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compare the reverse-mode gradient of `Σ w ∘ f(inputs)` (fixed random
/// weights `w`) against central differences for every input entry.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let probe = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars)?
    };
    let mut rng = RngState::new(seed);
    let weights = Tensor::<f64>::uniform(probe.shape(), -1.0, 1.0, &mut rng);
    let scalar = |ins: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(neumaier_sum(
            out.value().data().iter().zip(weights.data()).map(|(a, b)| a * b),
        ))
    };

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    if !out.is_tracked() {
        return invalid("grad_check", "output does not depend on any input");
    }
    let loss = g.weighted_sum(&out, &weights)?;
    let grads = g.backward(&loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
        retried: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zero(v);
        for j in 0..inputs[i].len() {
            let a = analytic.data()[j];
            let x0 = inputs[i].data()[j];
            let mut central = |h: f64| -> Result<f64> {
                let (xp, xm) = (x0 + h, x0 - h);
                work[i].data_mut()[j] = xp;
                let fp = scalar(&work)?;
                work[i].data_mut()[j] = xm;
                let fm = scalar(&work)?;
                work[i].data_mut()[j] = x0;
                Ok((fp - fm) / (xp - xm))
            };
            let mut numeric = central(FD_STEP)?;
            let mut e = rel_error(a, numeric);
            if e > RETRY_ABOVE {
                report.retried += 1;
                for h in FD_RETRY_STEPS {
                    let n = central(h)?;
                    let en = rel_error(a, n);
                    if en < e {
                        (numeric, e) = (n, en);
                    }
                }
            }
            report.entries += 1;
            if e > report.max_rel_error || !e.is_finite() {
                report.max_rel_error = if e.is_finite() { e } else { f64::INFINITY };
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Compensated summation; keeps the reduction's rounding well below the
/// finite-difference signal.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Uniform random input in `[lo, hi)`.
pub fn random_input(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}
