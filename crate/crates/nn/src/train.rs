//! Mini-batch training with early stopping on the validation loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::loss::{benchmark_distribution, class_weights};
use crate::model::{forward, predict_batch, Family, Mode, ModelSpec, ParamSet, CLASSES};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Samples with one label per horizon, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub horizons: usize,
    pub x: Vec<f32>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, horizons: usize) -> Self {
        Dataset { sample_shape, horizons, x: Vec::new(), y: Vec::new() }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.horizons.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: &[f32], labels: &[u8]) {
        assert_eq!(x.len(), self.sample_len(), "sample length");
        assert_eq!(labels.len(), self.horizons, "labels per sample");
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(labels);
    }

    pub fn extend(&mut self, other: &Dataset) {
        assert_eq!(self.sample_shape, other.sample_shape);
        assert_eq!(self.horizons, other.horizons);
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.x[i * s..(i + 1) * s]
    }

    /// Labels of horizon `h` for all samples.
    pub fn labels(&self, h: usize) -> Vec<u8> {
        self.y.iter().skip(h).step_by(self.horizons).copied().collect()
    }

    fn batch<F: Scalar>(&self, idx: &[usize]) -> (Tensor<F>, Vec<Vec<usize>>) {
        let s = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            data.extend(self.sample(i).iter().map(|&v| F::c(v as f64)));
        }
        let mut shape = vec![idx.len()];
        shape.extend(&self.sample_shape);
        let labels = (0..self.horizons)
            .map(|h| idx.iter().map(|&i| self.y[i * self.horizons + h] as usize).collect())
            .collect();
        (Tensor::new(shape, data), labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Per-horizon class weights; computed from the training labels when
    /// absent.
    pub class_weights: Option<Vec<[f64; CLASSES]>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let positive = a.lr > 0.0 && a.beta1 > 0.0 && a.beta2 > 0.0 && a.eps > 0.0;
        if !positive || a.beta1 >= 1.0 || a.beta2 >= 1.0 {
            return Err(NnError::Invalid("optimizer constants out of range".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(NnError::Invalid("batch size, epochs and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub params: ParamSet<F>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were restored (1-based; 0 for the benchmark).
    pub best_epoch: usize,
    /// Benchmark trained on a set missing some class.
    pub degenerate: bool,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains `spec` on `train`, early-stopping on `val` (or on the training loss
/// when `val` is empty), and restores the best parameters.
pub fn train_model<F: Scalar>(spec: &ModelSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(NnError::Invalid("empty training set".into()));
    }
    let k = spec.horizons();
    if train.horizons != k || (!val.is_empty() && val.horizons != k) {
        return Err(NnError::Invalid(format!("model has {k} heads, data has {} label columns", train.horizons)));
    }
    if spec.family == Family::Benchmark {
        return Ok(train_benchmark(spec, train, val));
    }
    if train.sample_shape != spec.input_shape() {
        return Err(NnError::shape(format!("samples are {:?}, model takes {:?}", train.sample_shape, spec.input_shape())).at("input"));
    }
    let weights: Vec<[f64; CLASSES]> = match &cfg.class_weights {
        Some(w) if w.len() == k => w.clone(),
        Some(w) => return Err(NnError::Invalid(format!("{} class-weight rows for {k} heads", w.len()))),
        None => (0..k).map(|h| class_weights(&train.labels(h))).collect(),
    };
    let weights: Vec<Vec<F>> = weights.iter().map(|w| w.iter().map(|&x| F::c(x)).collect()).collect();

    let mut params = ParamSet::<F>::init(spec, cfg.seed)?;
    let mut opt = OptimizerState::new(&params);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, 2 * epoch as u64));
        let mut dropout_rng = substream(cfg.seed, 2 * epoch as u64 + 1);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train.batch::<F>(idx);
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let mode = Mode::Train { dropout_seed: Some(dropout_rng.next_u64()) };
            let out = forward(spec, &params, &mut tape, xv, mode)?;
            let mut loss = None;
            for (h, &p) in out.heads.iter().enumerate() {
                let l = tape.cce(p, &labels[h], &weights[h])?;
                loss = Some(match loss {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let loss = tape.scale(loss.expect("at least one head"), F::c(1.0 / k as f64));
            let value = tape.value(loss).data[0].f64();
            if !value.is_finite() {
                return Err(NnError::Diverged { epoch, batch: b, loss: value });
            }
            total += value * idx.len() as f64;
            let grads = tape.backward(loss);
            let g: Vec<Vec<F>> =
                out.param_vars.iter().zip(&params.params).map(|(&v, p)| grads.get(v, p.data.len())).collect();
            adam_step(&mut params, &g, &mut opt, &cfg.adam);
            params.update_moving(&out.bn_stats);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { evaluate(spec, &params, val)? };
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch, batch: 0, loss: val_loss });
        }
        let improved = val_loss < best.0;
        if improved {
            best = (val_loss, params.clone(), epoch);
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, best: improved });
        if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome { params: best.1, history, best_epoch: best.2, degenerate: false })
}

fn train_benchmark<F: Scalar>(spec: &ModelSpec, train: &Dataset, val: &Dataset) -> TrainOutcome<F> {
    let k = spec.horizons();
    let mut params = ParamSet::<F>::init(spec, 0).expect("benchmark spec validated");
    let mut degenerate = false;
    let mut data = Vec::with_capacity(k * CLASSES);
    for h in 0..k {
        let b = benchmark_distribution(&train.labels(h));
        degenerate |= b.degenerate;
        data.extend(b.distribution.iter().map(|&p| F::c(p)));
    }
    params.params[0].data = data;
    let train_loss = evaluate(spec, &params, train).expect("benchmark evaluation");
    let val_loss = if val.is_empty() { train_loss } else { evaluate(spec, &params, val).expect("benchmark evaluation") };
    let history = vec![EpochRecord { epoch: 1, train_loss, val_loss, best: true }];
    TrainOutcome { params, history, best_epoch: 0, degenerate }
}

const EVAL_BATCH: usize = 512;

/// Class probabilities in inference mode, indexed `[i·K + h]`.
pub fn predict<F: Scalar>(spec: &ModelSpec, params: &ParamSet<F>, data: &Dataset) -> Result<Vec<[f64; CLASSES]>> {
    let k = spec.horizons();
    let mut out = Vec::with_capacity(data.len() * k);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let x = if spec.family == Family::Benchmark {
            Tensor::zeros(&[idx.len(), 1])
        } else {
            data.batch::<F>(idx).0
        };
        let probs = predict_batch(spec, params, x)?;
        out.extend(probs.chunks_exact(CLASSES).map(|r| [r[0].f64(), r[1].f64(), r[2].f64()]));
    }
    Ok(out)
}

/// Unweighted cross-entropy averaged over heads.
pub fn evaluate<F: Scalar>(spec: &ModelSpec, params: &ParamSet<F>, data: &Dataset) -> Result<f64> {
    let probs = predict(spec, params, data)?;
    let k = spec.horizons();
    let mut total = 0.0;
    for h in 0..k {
        let rows: Vec<[f64; CLASSES]> = probs.iter().skip(h).step_by(k).copied().collect();
        total += crate::loss::cce(&rows, &data.labels(h)).loss;
    }
    Ok(total / k as f64)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| NnError::Invalid(e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| NnError::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| NnError::io(path, e))
}
