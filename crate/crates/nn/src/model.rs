//! Model specifications, parameter sets and the forward pass of every family.
//!
//! Inputs are batched feature windows, time-major with the oldest event first:
//!
//! | family      | per-sample input |
//! |-------------|------------------|
//! | deepLOB     | `(T, 4L)`        |
//! | deepOF      | `(T, 2L)`        |
//! | deepVOL     | `(T, W, 2)`      |
//! | deepVOL-L3  | `(T, W, 2, D)`   |
//!
//! Every convolution in the conv module is followed by a leaky rectifier and
//! batch normalization. The inception branches use the rectifier only; one
//! batch normalization follows their concatenation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tape::{BatchStats, Padding, Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.6;
pub const BN_EPS: f64 = 1e-3;
pub const DROPOUT: f64 = 0.2;
pub const CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "benchmark")]
    Benchmark,
    #[serde(rename = "deeplob")]
    DeepLob,
    #[serde(rename = "deepof")]
    DeepOf,
    #[serde(rename = "deepvol")]
    DeepVol,
    #[serde(rename = "deepvol-l3")]
    DeepVolL3,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Benchmark, Family::DeepLob, Family::DeepOf, Family::DeepVol, Family::DeepVolL3];

    pub fn name(self) -> &'static str {
        match self {
            Family::Benchmark => "benchmark",
            Family::DeepLob => "deeplob",
            Family::DeepOf => "deepof",
            Family::DeepVol => "deepvol",
            Family::DeepVolL3 => "deepvol-l3",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| NnError::Invalid(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl FromStr for Level {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Level::L1),
            "L2" => Ok(Level::L2),
            "L3" => Ok(Level::L3),
            _ => Err(NnError::Invalid(format!("unknown data level {s:?}"))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Single,
    Seq2Seq,
}

/// Window length `t`, book levels `l`, tick window `w`, queue depth `d`,
/// decoder horizons `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub l: usize,
    pub w: usize,
    pub d: usize,
    pub k: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { t: 100, l: 10, w: 10, d: 10, k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub level: Level,
    pub head: Head,
    pub dims: Dims,
    /// Filters per conv-module layer.
    pub channels: usize,
    /// Filters per inception branch.
    pub inception: usize,
    /// LSTM units in encoder and decoder.
    pub hidden: usize,
    /// Filters of the deepVOL-L3 queue convolution.
    pub queue_channels: usize,
}

impl ModelSpec {
    pub fn new(family: Family, level: Level, head: Head, dims: Dims) -> Result<Self> {
        let spec = ModelSpec { family, level, head, dims, channels: 32, inception: 64, hidden: 64, queue_channels: 32 };
        spec.validate()?;
        Ok(spec)
    }

    /// Small widths for tests and desk-scale experiments.
    pub fn with_widths(mut self, channels: usize, inception: usize, hidden: usize) -> Self {
        self.channels = channels;
        self.inception = inception;
        self.hidden = hidden;
        self.queue_channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = matches!(
            (self.family, self.level),
            (Family::Benchmark, _)
                | (Family::DeepLob, Level::L1 | Level::L2)
                | (Family::DeepOf, Level::L1 | Level::L2)
                | (Family::DeepVol, Level::L2)
                | (Family::DeepVolL3, Level::L3)
        );
        if !ok {
            return Err(NnError::Invalid(format!("{} does not take {} data", self.family, self.level)));
        }
        let d = &self.dims;
        if d.t == 0 || d.l == 0 || d.k == 0 || self.channels == 0 || self.inception == 0 || self.hidden == 0 {
            return Err(NnError::Invalid("model dimensions must be positive".into()));
        }
        if matches!(self.family, Family::DeepVol | Family::DeepVolL3) && d.w < 2 {
            return Err(NnError::Invalid("volume models need at least two ticks per side".into()));
        }
        if self.family == Family::DeepVolL3 && (d.d == 0 || self.queue_channels == 0) {
            return Err(NnError::Invalid("queue depth must be positive".into()));
        }
        Ok(())
    }

    /// Number of prediction heads.
    pub fn horizons(&self) -> usize {
        match self.head {
            Head::Single => 1,
            Head::Seq2Seq => self.dims.k,
        }
    }

    /// Book levels seen by the model.
    pub fn levels(&self) -> usize {
        if self.level == Level::L1 {
            1
        } else {
            self.dims.l
        }
    }

    /// Per-sample input shape, excluding the batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        let d = &self.dims;
        match self.family {
            Family::Benchmark => vec![1],
            Family::DeepLob => vec![d.t, 4 * self.levels()],
            Family::DeepOf => vec![d.t, 2 * self.levels()],
            Family::DeepVol => vec![d.t, d.w, 2],
            Family::DeepVolL3 => vec![d.t, d.w, 2, d.d],
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    /// Display label such as `deepVOL(L3, seq2seq)`.
    pub fn label(&self) -> String {
        let base = match self.family {
            Family::Benchmark => return "benchmark".to_string(),
            Family::DeepLob => "deepLOB",
            Family::DeepOf => "deepOF",
            Family::DeepVol => "deepVOL",
            Family::DeepVolL3 => "deepVOL",
        };
        match self.head {
            Head::Single => format!("{base}({})", self.level),
            Head::Seq2Seq => format!("{base}({}, seq2seq)", self.level),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Moving statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState<F> {
    pub name: String,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub params: Vec<Param<F>>,
    pub bn: Vec<BnState<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn empty() -> Self {
        ParamSet { params: Vec::new(), bn: Vec::new() }
    }

    /// Seeded initialization: fan-balanced uniform weights, zero biases, unit
    /// batch-norm scales, moving mean 0 and variance 1.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::empty();
        if spec.family == Family::Benchmark {
            let u = F::c(1.0 / CLASSES as f64);
            params.params.push(Param {
                name: "benchmark.distribution".into(),
                shape: vec![spec.horizons(), CLASSES],
                data: vec![u; spec.horizons() * CLASSES],
            });
            return Ok(params);
        }
        let mut tape = Tape::new();
        let mut shape = vec![1];
        shape.extend(spec.input_shape());
        let x = tape.leaf(Tensor::zeros(&shape));
        let mut b = Builder::new(spec, &mut tape, None, Mode::Infer);
        b.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        b.network(x)?;
        Ok(b.created)
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
            && self.bn.iter().all(|s| s.mean.iter().chain(&s.var).all(|x| x.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let conv = |v: &[F]| v.iter().map(|&x| G::c(x.f64())).collect::<Vec<G>>();
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), shape: p.shape.clone(), data: conv(&p.data) })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|s| BnState { name: s.name.clone(), mean: conv(&s.mean), var: conv(&s.var) })
                .collect(),
        }
    }

    /// `moving ← m·moving + (1 − m)·batch` for every layer that reported stats.
    pub fn update_moving(&mut self, stats: &[(usize, BatchStats<F>)]) {
        let m = F::c(BN_MOMENTUM);
        let one_m = F::one() - m;
        for (i, s) in stats {
            let st = &mut self.bn[*i];
            for (a, &b) in st.mean.iter_mut().zip(&s.mean) {
                *a = m * *a + one_m * b;
            }
            for (a, &b) in st.var.iter_mut().zip(&s.var) {
                *a = m * *a + one_m * b;
            }
        }
    }
}

/// Forward-pass behaviour of batch normalization and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Moving statistics, no dropout.
    Infer,
    /// Batch statistics; dropout masks drawn from the seed when present.
    Train { dropout_seed: Option<u64> },
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct Forward<F> {
    /// One `(N, 3)` probability node per horizon.
    pub heads: Vec<Var>,
    /// Tape leaf of every parameter, aligned with `ParamSet::params`.
    pub param_vars: Vec<Var>,
    /// Batch statistics for each batch-normalization layer (training mode).
    pub bn_stats: Vec<(usize, BatchStats<F>)>,
    /// Named per-sample output shapes of the main layers.
    pub trace: Vec<(String, Vec<usize>)>,
}

/// Records the network on `tape` for a batch `input` of shape
/// `(N, input_shape…)`.
pub fn forward<F: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<F>,
    tape: &mut Tape<F>,
    input: Var,
    mode: Mode,
) -> Result<Forward<F>> {
    let mut b = Builder::new(spec, tape, Some(params), mode);
    let heads = if spec.family == Family::Benchmark { b.benchmark(input)? } else { b.network(input)? };
    Ok(Forward { heads, param_vars: b.vars, bn_stats: b.bn_stats, trace: b.trace })
}

/// Probabilities for a batch in inference mode, flattened `(N, K, 3)`.
pub fn predict_batch<F: Scalar>(spec: &ModelSpec, params: &ParamSet<F>, input: Tensor<F>) -> Result<Vec<F>> {
    let n = input.shape[0];
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let out = forward(spec, params, &mut tape, x, Mode::Infer)?;
    let k = out.heads.len();
    let mut probs = vec![F::zero(); n * k * CLASSES];
    for (h, &v) in out.heads.iter().enumerate() {
        for (i, row) in tape.value(v).data.chunks_exact(CLASSES).enumerate() {
            let o = (i * k + h) * CLASSES;
            probs[o..o + CLASSES].copy_from_slice(row);
        }
    }
    Ok(probs)
}

/// Named per-sample output shapes of the main layers for a batch of one.
pub fn layer_shapes(spec: &ModelSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let params = ParamSet::<f32>::init(spec, 0)?;
    let mut tape = Tape::new();
    let mut shape = vec![1];
    shape.extend(spec.input_shape());
    let x = tape.leaf(Tensor::zeros(&shape));
    Ok(forward(spec, &params, &mut tape, x, Mode::Infer)?.trace)
}


/// One recurrence step on pre-activations `z = b + U·x + W·h` of width `4H`,
/// gates ordered `[g, f, o, candidate]`:
///
/// ```text
/// s = g ⊙ σ(candidate) + f ⊙ s_prev      h = o ⊙ tanh(s)
/// ```
pub fn lstm_cell<F: Scalar>(tape: &mut Tape<F>, z: Var, s_prev: Option<Var>) -> Result<(Var, Var)> {
    let h = tape.value(z).last_dim() / 4;
    let gates = tape.sigmoid(z);
    let g = tape.slice_last(gates, 0, h)?;
    let f = tape.slice_last(gates, h, h)?;
    let o = tape.slice_last(gates, 2 * h, h)?;
    let cand = tape.slice_last(gates, 3 * h, h)?;
    let mut s = tape.mul(g, cand)?;
    if let Some(sp) = s_prev {
        let keep = tape.mul(f, sp)?;
        s = tape.add(s, keep)?;
    }
    let ts = tape.tanh(s);
    let hn = tape.mul(o, ts)?;
    Ok((hn, s))
}

/// Runs the recurrence over `x: (N, T, C)` from zero state with `u: (C, 4H)`,
/// `w: (H, 4H)`, `b: (4H)`. Returns `(h_t, s_t)` for every step.
pub fn lstm_unroll<F: Scalar>(tape: &mut Tape<F>, x: Var, u: Var, w: Var, b: Var) -> Result<Vec<(Var, Var)>> {
    let [n, t, c] = tape.shape(x)[..] else {
        return Err(NnError::shape(format!("recurrent input must be (N,T,C), got {:?}", tape.shape(x))));
    };
    if t == 0 {
        return Err(NnError::shape("empty sequence"));
    }
    let g4 = tape.value(b).len();
    let flat = tape.reshape(x, &[n * t, c])?;
    let xu = tape.matmul(flat, u)?;
    let xu = tape.add_bias(xu, b)?;
    let xu = tape.reshape(xu, &[n, t, g4])?;
    let mut track: Vec<(Var, Var)> = Vec::with_capacity(t);
    for step in 0..t {
        let mut z = tape.time_step(xu, step)?;
        if let Some(&(hp, _)) = track.last() {
            let hw = tape.matmul(hp, w)?;
            z = tape.add(z, hw)?;
        }
        let prev = track.last().map(|s| s.1);
        track.push(lstm_cell(tape, z, prev)?);
    }
    Ok(track)
}

enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Builder<'a, F> {
    spec: &'a ModelSpec,
    tape: &'a mut Tape<F>,
    existing: Option<&'a ParamSet<F>>,
    created: ParamSet<F>,
    rng: Option<ChaCha8Rng>,
    mode: Mode,
    vars: Vec<Var>,
    bn_count: usize,
    bn_stats: Vec<(usize, BatchStats<F>)>,
    trace: Vec<(String, Vec<usize>)>,
}

impl<'a, F: Scalar> Builder<'a, F> {
    fn new(spec: &'a ModelSpec, tape: &'a mut Tape<F>, existing: Option<&'a ParamSet<F>>, mode: Mode) -> Self {
        Builder {
            spec,
            tape,
            existing,
            created: ParamSet::empty(),
            rng: None,
            mode,
            vars: Vec::new(),
            bn_count: 0,
            bn_stats: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let i = self.vars.len();
        let p = if let Some(rng) = self.rng.as_mut() {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| F::c(rng.random_range(-limit..limit))).collect()
                }
                Init::Zeros => vec![F::zero(); n],
                Init::Ones => vec![F::one(); n],
            };
            self.created.params.push(Param { name: name.to_string(), shape: shape.to_vec(), data });
            &self.created.params[i]
        } else {
            self.existing
                .and_then(|ps| ps.params.get(i))
                .filter(|p| p.name == name)
                .ok_or_else(|| NnError::shape(format!("parameter set has no {name} at position {i}")).at(name))?
        };
        if p.shape != shape {
            return Err(NnError::shape(format!("parameter {name} has shape {:?}, layer needs {shape:?}", p.shape)).at(name));
        }
        let v = self.tape.leaf(Tensor::new(p.shape.clone(), p.data.clone()));
        self.vars.push(v);
        Ok(v)
    }

    fn trace(&mut self, name: &str, v: Var) {
        self.trace.push((name.to_string(), self.tape.shape(v)[1..].to_vec()));
    }

    fn conv(&mut self, name: &str, x: Var, k: (usize, usize), stride: (usize, usize), cout: usize, pad: Padding) -> Result<Var> {
        let cin = *self.tape.shape(x).last().unwrap();
        let w = self.param(
            &format!("{name}.w"),
            &[k.0, k.1, cin, cout],
            Init::Glorot { fan_in: k.0 * k.1 * cin, fan_out: k.0 * k.1 * cout },
        )?;
        let b = self.param(&format!("{name}.b"), &[cout], Init::Zeros)?;
        self.tape.conv2d(x, w, b, stride, pad).map_err(|e| e.at(name))
    }

    fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let c = *self.tape.shape(x).last().unwrap();
        let gamma = self.param(&format!("{name}.gamma"), &[c], Init::Ones)?;
        let beta = self.param(&format!("{name}.beta"), &[c], Init::Zeros)?;
        let idx = self.bn_count;
        self.bn_count += 1;
        if self.rng.is_some() {
            self.created.bn.push(BnState { name: name.to_string(), mean: vec![F::zero(); c], var: vec![F::one(); c] });
        }
        let eps = F::c(BN_EPS);
        let (y, stats) = match self.mode {
            Mode::Infer => {
                let source = if self.rng.is_some() { Some(&self.created) } else { self.existing };
                let st = source
                    .and_then(|ps| ps.bn.get(idx))
                    .filter(|st| st.name == name && st.mean.len() == c)
                    .ok_or_else(|| NnError::shape(format!("no moving statistics for {c} channels")).at(name))?;
                let (mean, var) = (st.mean.clone(), st.var.clone());
                self.tape.batch_norm(x, gamma, beta, eps, Some((&mean, &var)))
            }
            Mode::Train { .. } => self.tape.batch_norm(x, gamma, beta, eps, None),
        }
        .map_err(|e| e.at(name))?;
        if let Some(s) = stats {
            self.bn_stats.push((idx, s));
        }
        Ok(y)
    }

    /// Convolution, leaky rectifier, batch normalization.
    fn conv_block(&mut self, name: &str, x: Var, k: (usize, usize), stride: (usize, usize), pad: Padding) -> Result<Var> {
        let c = self.conv(name, x, k, stride, self.spec.channels, pad)?;
        let a = self.tape.leaky_relu(c, F::c(LEAKY_SLOPE));
        self.batch_norm(&format!("{name}.bn"), a)
    }

    fn temporal_pair(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let y = self.conv_block(&format!("{prefix}.temporal1"), x, (4, 1), (1, 1), Padding::TimeSame)?;
        let y = self.conv_block(&format!("{prefix}.temporal2"), y, (4, 1), (1, 1), Padding::TimeSame)?;
        self.trace(prefix, y);
        Ok(y)
    }

    fn conv_relu(&mut self, name: &str, x: Var, k: usize, cout: usize) -> Result<Var> {
        let pad = if k == 1 { Padding::Valid } else { Padding::TimeSame };
        let y = self.conv(name, x, (k, 1), (1, 1), cout, pad)?;
        Ok(self.tape.leaky_relu(y, F::c(LEAKY_SLOPE)))
    }

    fn inception(&mut self, x: Var) -> Result<Var> {
        let i = self.spec.inception;
        let a = self.conv_relu("inception.ma3.reduce", x, 1, i)?;
        let a = self.conv_relu("inception.ma3", a, 3, i)?;
        let b = self.conv_relu("inception.ma5.reduce", x, 1, i)?;
        let b = self.conv_relu("inception.ma5", b, 5, i)?;
        let c = self.tape.max_pool_time(x, 3).map_err(|e| e.at("inception.pool"))?;
        let c = self.conv_relu("inception.pool.project", c, 1, i)?;
        let cat = self.tape.concat(&[a, b, c]).map_err(|e| e.at("inception.concat"))?;
        let y = self.batch_norm("inception.bn", cat)?;
        self.trace("inception", y);
        Ok(y)
    }

    fn lstm_params(&mut self, name: &str, input: usize) -> Result<(Var, Var, Var)> {
        let h = self.spec.hidden;
        let u = self.param(&format!("{name}.u"), &[input, 4 * h], Init::Glorot { fan_in: input, fan_out: 4 * h })?;
        let w = self.param(&format!("{name}.w"), &[h, 4 * h], Init::Glorot { fan_in: h, fan_out: 4 * h })?;
        let b = self.param(&format!("{name}.b"), &[4 * h], Init::Zeros)?;
        Ok((u, w, b))
    }

    /// Runs the encoder over `(N, T, C)` from zero state; returns the final
    /// hidden and cell states.
    fn lstm(&mut self, x: Var) -> Result<(Var, Var)> {
        let c = *self.tape.shape(x).last().unwrap();
        let (u, w, b) = self.lstm_params("lstm", c)?;
        let track = lstm_unroll(self.tape, x, u, w, b).map_err(|e| e.at("lstm"))?;
        let (hf, sf) = *track.last().expect("t ≥ 1");
        self.trace("lstm", hf);
        Ok((hf, sf))
    }

    fn dense(&mut self, name: &str, x: Var, out: usize) -> Result<Var> {
        let inp = *self.tape.shape(x).last().unwrap();
        let w = self.param(&format!("{name}.w"), &[inp, out], Init::Glorot { fan_in: inp, fan_out: out })?;
        let b = self.param(&format!("{name}.b"), &[out], Init::Zeros)?;
        let y = self.tape.matmul(x, w).map_err(|e| e.at(name))?;
        self.tape.add_bias(y, b)
    }

    /// Decoder rolled for `K` steps from the encoder state, fed its own
    /// previous prediction and the context `c = h_T`.
    fn decoder(&mut self, h_enc: Var, s_enc: Var) -> Result<Vec<Var>> {
        let n = self.tape.shape(h_enc)[0];
        let hd = self.spec.hidden;
        let (u, w, b) = self.lstm_params("decoder", CLASSES + hd)?;
        let dw = self.param("decoder.dense.w", &[2 * hd, CLASSES], Init::Glorot { fan_in: 2 * hd, fan_out: CLASSES })?;
        let db = self.param("decoder.dense.b", &[CLASSES], Init::Zeros)?;
        let p0: Vec<F> = (0..n).flat_map(|_| [F::zero(), F::one(), F::zero()]).collect();
        let mut p = self.tape.leaf(Tensor::new(vec![n, CLASSES], p0));
        let (mut h, mut s) = (h_enc, s_enc);
        let mut heads = Vec::with_capacity(self.spec.dims.k);
        for _ in 0..self.spec.dims.k {
            let inp = self.tape.concat(&[p, h_enc])?;
            let z = self.tape.matmul(inp, u)?;
            let z = self.tape.add_bias(z, b)?;
            let hw = self.tape.matmul(h, w)?;
            let z = self.tape.add(z, hw)?;
            (h, s) = lstm_cell(self.tape, z, Some(s))?;
            let read = self.tape.concat(&[h, h_enc])?;
            let logits = self.tape.matmul(read, dw)?;
            let logits = self.tape.add_bias(logits, db)?;
            p = self.tape.softmax(logits);
            heads.push(p);
        }
        self.trace("decoder", p);
        Ok(heads)
    }

    fn dropout(&mut self, x: Var) -> Var {
        let Mode::Train { dropout_seed: Some(seed) } = self.mode else { return x };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = F::c(1.0 / (1.0 - DROPOUT));
        let mask = (0..self.tape.value(x).len())
            .map(|_| if rng.random::<f64>() < DROPOUT { F::zero() } else { keep })
            .collect();
        self.tape.mul_const(x, mask)
    }

    fn network(&mut self, x: Var) -> Result<Vec<Var>> {
        let spec = *self.spec;
        let d = spec.dims;
        let n = self.tape.shape(x)[0];
        let mut expected = vec![n];
        expected.extend(spec.input_shape());
        if self.tape.shape(x) != expected {
            return Err(NnError::shape(format!("expected {expected:?}, got {:?}", self.tape.shape(x))).at("input"));
        }
        let spatial2 = match spec.family {
            Family::DeepLob => {
                let x = self.tape.reshape(x, &[n, d.t, 4 * spec.levels(), 1])?;
                let y = self.conv_block("conv1.spatial", x, (1, 2), (1, 2), Padding::Valid)?;
                let y = self.temporal_pair("conv1", y)?;
                self.conv_block("conv2.spatial", y, (1, 2), (1, 2), Padding::Valid)?
            }
            Family::DeepOf => {
                let x = self.tape.reshape(x, &[n, d.t, 2 * spec.levels(), 1])?;
                self.conv_block("conv2.spatial", x, (1, 2), (1, 2), Padding::Valid)?
            }
            Family::DeepVol => self.conv_block("conv2.spatial", x, (1, 2), (1, 1), Padding::Valid)?,
            Family::DeepVolL3 => {
                let q = spec.queue_channels;
                let x = self.tape.reshape(x, &[n, d.t, 2 * d.w, d.d])?;
                let y = self.conv("queue", x, (1, 1), (1, 1), q, Padding::Valid)?;
                let y = self.tape.reshape(y, &[n, d.t, d.w, 2 * q])?;
                self.trace("queue", y);
                self.conv_block("conv2.spatial", y, (1, 2), (1, 1), Padding::Valid)?
            }
            Family::Benchmark => unreachable!("benchmark has no network"),
        };
        let y = self.temporal_pair("conv2", spatial2)?;
        let width = self.tape.shape(y)[2];
        let y = self.conv_block("conv3.spatial", y, (1, width), (1, 1), Padding::Valid)?;
        let y = self.temporal_pair("conv3", y)?;
        let y = self.inception(y)?;
        let feat = self.tape.shape(y)[3];
        let y = self.tape.reshape(y, &[n, d.t, feat])?;
        self.trace("reshape", y);
        let y = self.dropout(y);
        let (h, s) = self.lstm(y)?;
        match spec.head {
            Head::Single => {
                let logits = self.dense("dense", h, CLASSES)?;
                let p = self.tape.softmax(logits);
                self.trace("output", p);
                Ok(vec![p])
            }
            Head::Seq2Seq => self.decoder(h, s),
        }
    }

    /// Constant rows of the stored class distribution, one node per horizon.
    fn benchmark(&mut self, x: Var) -> Result<Vec<Var>> {
        let n = self.tape.shape(x)[0];
        let k = self.spec.horizons();
        let dist = self.param("benchmark.distribution", &[k, CLASSES], Init::Zeros)?;
        let rows = self.tape.value(dist).data.clone();
        let heads = (0..k)
            .map(|h| {
                let row = &rows[h * CLASSES..(h + 1) * CLASSES];
                let data = (0..n).flat_map(|_| row.iter().copied()).collect();
                self.tape.leaf(Tensor::new(vec![n, CLASSES], data))
            })
            .collect();
        Ok(heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(family: Family, level: Level, head: Head) -> ModelSpec {
        let dims = Dims { t: 8, l: 2, w: 4, d: 3, k: 3 };
        ModelSpec::new(family, level, head, dims).unwrap().with_widths(2, 2, 4)
    }

    fn input(spec: &ModelSpec, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = vec![n];
        shape.extend(spec.input_shape());
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn deeplob_full_size_shapes() {
        let spec = ModelSpec::new(Family::DeepLob, Level::L2, Head::Single, Dims::default()).unwrap();
        let shapes: Vec<_> = layer_shapes(&spec).unwrap();
        let get = |n: &str| shapes.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(get("conv1"), vec![100, 20, 32]);
        assert_eq!(get("conv2"), vec![100, 10, 32]);
        assert_eq!(get("conv3"), vec![100, 1, 32]);
        assert_eq!(get("reshape"), vec![100, 192]);
        assert_eq!(get("lstm"), vec![64]);
        assert_eq!(get("output"), vec![3]);
    }

    #[test]
    fn volume_shapes() {
        let spec = ModelSpec::new(Family::DeepVolL3, Level::L3, Head::Seq2Seq, Dims::default()).unwrap();
        let shapes = layer_shapes(&spec).unwrap();
        let get = |n: &str| shapes.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(get("queue"), vec![100, 10, 64]);
        assert_eq!(get("conv2"), vec![100, 9, 32]);
        assert_eq!(get("conv3"), vec![100, 1, 32]);
        assert_eq!(get("decoder"), vec![3]);
    }

    #[test]
    fn invalid_combinations_rejected() {
        assert!(ModelSpec::new(Family::DeepVol, Level::L1, Head::Single, Dims::default()).is_err());
        assert!(ModelSpec::new(Family::DeepLob, Level::L3, Head::Single, Dims::default()).is_err());
    }

    #[test]
    fn mismatched_input_names_the_layer() {
        let spec = tiny(Family::DeepOf, Level::L2, Head::Single);
        let params = ParamSet::<f64>::init(&spec, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 8, 3]));
        let err = forward(&spec, &params, &mut tape, x, Mode::Infer).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
        let other = ParamSet::<f64>::init(&tiny(Family::DeepLob, Level::L2, Head::Single), 1).unwrap();
        let x = tape.leaf(input(&spec, 2, 0));
        let err = forward(&spec, &other, &mut tape, x, Mode::Infer).unwrap_err();
        assert!(err.to_string().contains("conv2.spatial"), "{err}");
    }

    fn lstm_track(x: &Tensor<f64>, u: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (xv, uv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(u.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let track = lstm_unroll(&mut tape, xv, uv, wv, bv).unwrap();
        track.iter().map(|&(h, s)| (tape.value(h).data.clone(), tape.value(s).data.clone())).collect()
    }

    #[test]
    fn lstm_zero_parameters() {
        let h = 3;
        let x = Tensor::from_f64(&[1, 2, 2], &[0.4, -1.0, 2.0, 0.5]);
        let track = lstm_track(&x, &Tensor::zeros(&[2, 4 * h]), &Tensor::zeros(&[h, 4 * h]), &Tensor::zeros(&[4 * h]));
        let (h1, s1) = &track[0];
        assert!(s1.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(h1.iter().all(|&v| (v - 0.5 * 0.25f64.tanh()).abs() < 1e-15));
        assert!((h1[0] - 0.12245).abs() < 1e-5);
    }

    #[test]
    fn lstm_matches_scalar_loop() {
        let (n, t, c, hd) = (2, 5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = Tensor::new(vec![n, t, c], draw(n * t * c));
        let u = Tensor::new(vec![c, 4 * hd], draw(c * 4 * hd));
        let w = Tensor::new(vec![hd, 4 * hd], draw(hd * 4 * hd));
        let b = Tensor::new(vec![4 * hd], draw(4 * hd));
        let track = lstm_track(&x, &u, &w, &b);
        for ni in 0..n {
            let mut h = vec![0.0; hd];
            let mut s = vec![0.0; hd];
            for ti in 0..t {
                let mut z = vec![0.0; 4 * hd];
                for (j, zj) in z.iter_mut().enumerate() {
                    let mut acc = b.data[j];
                    for ci in 0..c {
                        acc += x.data[(ni * t + ti) * c + ci] * u.data[ci * 4 * hd + j];
                    }
                    for hi in 0..hd {
                        acc += h[hi] * w.data[hi * 4 * hd + j];
                    }
                    *zj = acc;
                }
                for j in 0..hd {
                    let (g, f, o, q) = (sigma(z[j]), sigma(z[hd + j]), sigma(z[2 * hd + j]), sigma(z[3 * hd + j]));
                    s[j] = g * q + f * s[j];
                    h[j] = o * s[j].tanh();
                }
                let (th, ts) = &track[ti];
                for j in 0..hd {
                    assert!((th[ni * hd + j] - h[j]).abs() < 1e-12);
                    assert!((ts[ni * hd + j] - s[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_step_is_one_recurrence() {
        let x = Tensor::from_f64(&[1, 1, 1], &[0.7]);
        let u = Tensor::from_f64(&[1, 4], &[0.1, 0.2, 0.3, 0.4]);
        let b = Tensor::from_f64(&[4], &[0.0, 0.1, -0.1, 0.05]);
        let track = lstm_track(&x, &u, &Tensor::zeros(&[1, 4]), &b);
        assert_eq!(track.len(), 1);
        let z: Vec<f64> = (0..4).map(|j| 0.7 * u.data[j] + b.data[j]).collect();
        let s = sigma(z[0]) * sigma(z[3]);
        assert!((track[0].1[0] - s).abs() < 1e-15);
        assert!((track[0].0[0] - sigma(z[2]) * s.tanh()).abs() < 1e-15);
    }

    #[test]
    fn inception_keeps_constant_input_constant_inside() {
        let spec = tiny(Family::DeepLob, Level::L2, Head::Single).with_widths(3, 4, 4);
        let t = 9;
        let mut tape = Tape::<f64>::new();
        let row = [0.3, -0.8, 1.1];
        let x = tape.leaf(Tensor::new(vec![1, t, 1, 3], (0..t).flat_map(|_| row).collect()));
        let mut b = Builder::new(&spec, &mut tape, None, Mode::Infer);
        b.rng = Some(ChaCha8Rng::seed_from_u64(4));
        let y = b.inception(x).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape, vec![1, t, 1, 12]);
        let at = |ti: usize| &v.data[ti * 12..(ti + 1) * 12];
        for ti in 3..t - 2 {
            assert_eq!(at(ti), at(2));
        }
    }

    #[test]
    fn zero_decoder_gives_uniform_rows() {
        let spec = tiny(Family::DeepOf, Level::L2, Head::Seq2Seq);
        let mut params = ParamSet::<f64>::init(&spec, 3).unwrap();
        for p in params.params.iter_mut().filter(|p| p.name.starts_with("decoder")) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let probs = predict_batch(&spec, &params, input(&spec, 4, 1)).unwrap();
        assert_eq!(probs.len(), 4 * 3 * 3);
        assert!(probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn outputs_are_distributions() {
        for (f, l) in [(Family::DeepLob, Level::L1), (Family::DeepOf, Level::L1), (Family::DeepVol, Level::L2), (Family::DeepVolL3, Level::L3)] {
            for head in [Head::Single, Head::Seq2Seq] {
                let spec = tiny(f, l, head);
                let params = ParamSet::<f32>::init(&spec, 5).unwrap();
                let probs = predict_batch(&spec, &params, input(&spec, 3, 2).cast()).unwrap();
                for row in probs.chunks_exact(3) {
                    assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
                    assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn batch_permutation_equivariance() {
        let spec = tiny(Family::DeepVol, Level::L2, Head::Single);
        let params = ParamSet::<f64>::init(&spec, 8).unwrap();
        let x = input(&spec, 3, 5);
        let s = spec.input_len();
        let perm = [2usize, 0, 1];
        let px = Tensor::new(x.shape.clone(), perm.iter().flat_map(|&i| x.data[i * s..(i + 1) * s].to_vec()).collect());
        let a = predict_batch(&spec, &params, x).unwrap();
        let b = predict_batch(&spec, &params, px).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(&b[j * 3..j * 3 + 3], &a[i * 3..i * 3 + 3]);
        }
    }

    #[test]
    fn l3_with_summing_queue_filter_reproduces_l2() {
        let l2 = tiny(Family::DeepVol, Level::L2, Head::Single);
        let mut l3 = tiny(Family::DeepVolL3, Level::L3, Head::Single);
        l3.queue_channels = 1;
        let p2 = ParamSet::<f64>::init(&l2, 11).unwrap();
        let mut p3 = ParamSet::<f64>::init(&l3, 12).unwrap();
        p3.get_mut("queue.w").unwrap().data.iter_mut().for_each(|v| *v = 1.0);
        for p in p3.params.iter_mut().filter(|p| !p.name.starts_with("queue")) {
            p.data = p2.get(&p.name).unwrap().data.clone();
        }
        p3.bn = p2.bn.clone();
        let slots = input(&l3, 2, 6);
        let d = l3.dims.d;
        let volume: Vec<f64> = slots.data.chunks_exact(d).map(|q| q.iter().sum()).collect();
        let mut shape = vec![2];
        shape.extend(l2.input_shape());
        let a = predict_batch(&l2, &p2, Tensor::new(shape, volume)).unwrap();
        let b = predict_batch(&l3, &p3, slots).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn benchmark_returns_stored_distribution() {
        let spec = tiny(Family::Benchmark, Level::L2, Head::Single);
        let mut params = ParamSet::<f64>::init(&spec, 0).unwrap();
        params.params[0].data = vec![0.3, 0.4, 0.3];
        let probs = predict_batch(&spec, &params, Tensor::zeros(&[5, 1])).unwrap();
        for row in probs.chunks_exact(3) {
            assert_eq!(row, &[0.3, 0.4, 0.3]);
        }
    }

    #[test]
    fn moving_statistics_update() {
        let spec = tiny(Family::DeepOf, Level::L2, Head::Single);
        let mut params = ParamSet::<f64>::init(&spec, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(input(&spec, 4, 3));
        let out = forward(&spec, &params, &mut tape, x, Mode::Train { dropout_seed: None }).unwrap();
        assert_eq!(out.bn_stats.len(), params.bn.len());
        let (i, st) = &out.bn_stats[0];
        params.update_moving(&out.bn_stats);
        for c in 0..st.mean.len() {
            assert!((params.bn[*i].mean[c] - 0.4 * st.mean[c]).abs() < 1e-15);
            assert!((params.bn[*i].var[c] - (0.6 + 0.4 * st.var[c])).abs() < 1e-15);
        }
    }
}
