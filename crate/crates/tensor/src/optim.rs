//! ADAM with bias correction, and cosine learning-rate annealing.

use crate::error::{invalid, shape_err, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update of a single tensor. `step` is the 1-based
/// count of updates this tensor has received, including this one.
pub fn adam_update<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != m.shape() || param.shape() != v.shape() {
        return shape_err(
            "adam_update",
            format!(
                "param {:?}, grad {:?}, moments {:?}/{:?}",
                param.shape(),
                grad.shape(),
                m.shape(),
                v.shape()
            ),
        );
    }
    if step == 0 {
        return invalid("adam_update", "step counter starts at 1");
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(step.min(i32::MAX as u64) as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(step.min(i32::MAX as u64) as i32));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    let one = T::one();
    for (((p, &g), mi), vi) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Per-parameter update counts; frozen parameters do not advance.
    pub steps: Vec<u64>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            steps: vec![0; store.len()],
        }
    }

    /// Update every parameter whose group has a learning rate; `lr_for`
    /// returning `None` freezes the group for this step.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr_for: impl Fn(ParamGroup) -> Option<f64>,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return shape_err(
                "AdamState::step",
                format!(
                    "{} parameters, {} gradients, {} moment slots",
                    store.len(),
                    grads.len(),
                    self.m.len()
                ),
            );
        }
        for (i, p) in store.iter_mut().enumerate() {
            let Some(lr) = lr_for(p.group) else {
                continue;
            };
            self.steps[i] += 1;
            adam_update(
                &mut p.value,
                &grads[i],
                &mut self.m[i],
                &mut self.v[i],
                self.steps[i],
                lr,
                &self.config,
            )?;
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_base` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_base: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return invalid(
            "cosine_lr",
            format!("step {} outside 0..={}", step, total_steps),
        );
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut p = Tensor::<f32>::from_f64(&[3], &[0.5, -1.25, 3.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::zeros(&[3]);
        let (mut m, mut v) = (Tensor::zeros(&[3]), Tensor::zeros(&[3]));
        for s in 1..=5 {
            adam_update(&mut p, &g, &mut m, &mut v, s, 1e-3, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let mut p = Tensor::<f64>::from_f64(&[4], &[0.0, 1.0, 2.0, -3.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::from_f64(&[4], &[0.3, -2.0, 1e-2, -7.5]).unwrap();
        let (mut m, mut v) = (Tensor::zeros(&[4]), Tensor::zeros(&[4]));
        let lr = 1e-4;
        adam_update(&mut p, &g, &mut m, &mut v, 1, lr, &AdamConfig::default()).unwrap();
        for i in 0..4 {
            let delta = orig.data()[i] - p.data()[i];
            let expected = lr * g.data()[i].signum();
            assert!((delta - expected).abs() < 1e-9, "{delta} vs {expected}");
        }
    }

    #[test]
    fn paper_defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let (base, min) = (1e-4, 1e-7);
        assert_eq!(cosine_lr(0, 800, base, min).unwrap(), base);
        assert!((cosine_lr(800, 800, base, min).unwrap() - min).abs() < 1e-18);
        let mid = cosine_lr(400, 800, base, min).unwrap();
        assert!((mid - (base + min) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(801, 800, base, min).is_err());
    }

    #[test]
    fn cosine_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(s, 100, 2.5e-5, 1e-7).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn frozen_group_does_not_move() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::ones(&[2]), ParamGroup::Main);
        store.add("b", Tensor::ones(&[2]), ParamGroup::Flow);
        let mut st = AdamState::new(&store, AdamConfig::default());
        let grads = vec![Tensor::ones(&[2]), Tensor::ones(&[2])];
        st.step(&mut store, &grads, |g| (g == ParamGroup::Main).then_some(0.1))
            .unwrap();
        assert_eq!(st.steps, vec![1, 0]);
        let vals: Vec<f32> = store.iter().map(|(_, p)| p.value.data()[0]).collect();
        assert!(vals[0] < 1.0);
        assert_eq!(vals[1], 1.0);
    }
}
