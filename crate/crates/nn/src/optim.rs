//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::model::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1.0 }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        let zeros = || params.params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        OptimizerState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// m̂ = m/(1−β₁ⁿ)            v̂ = v/(1−β₂ⁿ)
/// θ ← θ − η·m̂/(√v̂ + ε)
/// ```
pub fn adam_step<F: Scalar>(params: &mut ParamSet<F>, grads: &[Vec<F>], state: &mut OptimizerState<F>, cfg: &AdamConfig) {
    assert_eq!(grads.len(), params.params.len());
    state.step += 1;
    let n = state.step as i32;
    let (b1, b2) = (F::c(cfg.beta1), F::c(cfg.beta2));
    let (one_b1, one_b2) = (F::c(1.0 - cfg.beta1), F::c(1.0 - cfg.beta2));
    let c1 = F::c(1.0 - cfg.beta1.powi(n));
    let c2 = F::c(1.0 - cfg.beta2.powi(n));
    let (lr, eps) = (F::c(cfg.lr), F::c(cfg.eps));
    for (i, p) in params.params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for j in 0..p.data.len() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p.data[j] = p.data[j] - lr * mh / (vh.sqrt() + eps);
        }
    }
}
