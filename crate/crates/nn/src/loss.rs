//! Categorical cross-entropy on plain probability arrays, class weights and
//! the empirical-distribution benchmark.

use crate::model::CLASSES;
use crate::tape::PROB_FLOOR;

/// Loss value together with the number of realized-class probabilities that
/// fell below the clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CceValue {
    pub loss: f64,
    pub clamped: usize,
}

/// `−(1/N) Σ_i w_{y_i} log max(p_{y_i}(x_i), 1e−12)` over rows of `probs`.
pub fn weighted_cce(probs: &[[f64; CLASSES]], labels: &[u8], weights: &[f64; CLASSES]) -> CceValue {
    assert_eq!(probs.len(), labels.len());
    let mut clamped = 0;
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let q = p[y as usize];
        if q < PROB_FLOOR {
            clamped += 1;
        }
        total += weights[y as usize] * q.max(PROB_FLOOR).ln();
    }
    let n = labels.len().max(1) as f64;
    CceValue { loss: -total / n, clamped }
}

pub fn cce(probs: &[[f64; CLASSES]], labels: &[u8]) -> CceValue {
    weighted_cce(probs, labels, &[1.0; CLASSES])
}

pub fn class_counts(labels: &[u8]) -> [usize; CLASSES] {
    let mut c = [0; CLASSES];
    for &y in labels {
        c[y as usize] += 1;
    }
    c
}

/// `w_c = N / #{y_i = c}`; classes absent from the training set get weight 0.
pub fn class_weights(labels: &[u8]) -> [f64; CLASSES] {
    let counts = class_counts(labels);
    let n = labels.len() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { n / c as f64 })
}

/// Training-set class frequencies. `degenerate` is set when some class never
/// occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub distribution: [f64; CLASSES],
    pub degenerate: bool,
}

pub fn benchmark_distribution(labels: &[u8]) -> Benchmark {
    let counts = class_counts(labels);
    let n = labels.len().max(1) as f64;
    Benchmark { distribution: counts.map(|c| c as f64 / n), degenerate: counts.contains(&0) }
}
