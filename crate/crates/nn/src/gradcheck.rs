//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{forward, Mode, ModelSpec, ParamSet, CLASSES};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub entries: usize,
    pub max_rel_err: f64,
    /// Parameter holding the worst entry.
    pub worst: String,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-6;

fn loss(spec: &ModelSpec, params: &ParamSet<f64>, x: &Tensor<f64>, labels: &[Vec<usize>], weights: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = forward(spec, params, &mut tape, xv, Mode::Train { dropout_seed: Some(7) })?;
    let mut acc = None;
    for (h, &p) in out.heads.iter().enumerate() {
        let l = tape.cce(p, &labels[h], weights)?;
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l)?,
        });
    }
    let l = tape.scale(acc.expect("heads"), 1.0 / out.heads.len() as f64);
    let grads = tape.backward(l);
    let g = out.param_vars.iter().zip(&params.params).map(|(&v, p)| grads.get(v, p.data.len())).collect();
    Ok((tape.value(l).data[0], g))
}

/// Compares tape gradients of the weighted cross-entropy against central
/// differences for every parameter entry. Batch normalization runs in
/// training mode and the dropout mask is fixed.
pub fn check_model(spec: &ModelSpec, batch: usize, seed: u64) -> Result<GradReport> {
    let params = ParamSet::<f64>::init(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut shape = vec![batch];
    shape.extend(spec.input_shape());
    let len = shape.iter().product();
    let x = Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
    let labels: Vec<Vec<usize>> = (0..spec.horizons()).map(|_| (0..batch).map(|_| rng.random_range(0..CLASSES)).collect()).collect();
    let weights = [1.5, 0.75, 2.0];
    let (_, analytic) = loss(spec, &params, &x, &labels, &weights)?;
    let mut report = GradReport { entries: 0, max_rel_err: 0.0, worst: String::new() };
    for (pi, p) in params.params.iter().enumerate() {
        for j in 0..p.data.len() {
            let mut plus = params.clone();
            plus.params[pi].data[j] += STEP;
            let mut minus = params.clone();
            minus.params[pi].data[j] -= STEP;
            let numeric = (loss(spec, &plus, &x, &labels, &weights)?.0 - loss(spec, &minus, &x, &labels, &weights)?.0) / (2.0 * STEP);
            let err = relative_error(analytic[pi][j], numeric, FLOOR);
            report.entries += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{j}]", p.name);
            }
        }
    }
    Ok(report)
}
