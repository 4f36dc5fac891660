//! Moving-block bootstrap of window indices and the `T_max` equivalence test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::panel::LossPanel;
use crate::{McsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    /// Block length; `⌈W^{1/3}⌉` when absent.
    pub block: Option<usize>,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replications: 10_000, block: None, seed: 0 }
    }
}

/// Smallest `l` with `l³ ≥ W`.
pub fn default_block_length(windows: usize) -> usize {
    let mut l = 1;
    while l * l * l < windows {
        l += 1;
    }
    l
}

/// Bootstrap resamples stored as block starts. Replicate `b` concatenates
/// blocks `[s, s + l)` and truncates to `W` indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Resamples {
    pub windows: usize,
    pub block: usize,
    pub starts: Vec<Vec<usize>>,
}

impl Resamples {
    /// Replicate `b` draws from ChaCha stream `b` of `seed`, so the set does
    /// not depend on how replicates are scheduled.
    pub fn generate(windows: usize, block: usize, replications: usize, seed: u64) -> Self {
        let block = block.clamp(1, windows.max(1));
        let n_blocks = windows.div_ceil(block);
        let starts = (0..replications)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                (0..n_blocks).map(|_| rng.random_range(0..=windows - block)).collect()
            })
            .collect();
        Resamples { windows, block, starts }
    }

    pub fn replications(&self) -> usize {
        self.starts.len()
    }

    /// Window indices of replicate `b`.
    pub fn indices(&self, b: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.starts[b].iter().flat_map(|&s| s..s + self.block).collect();
        out.truncate(self.windows);
        out
    }

    /// Resampled mean of `x` via its prefix sums.
    fn mean(&self, b: usize, prefix: &[f64]) -> f64 {
        let mut left = self.windows;
        let mut total = 0.0;
        for &s in &self.starts[b] {
            let len = self.block.min(left);
            total += prefix[s + len] - prefix[s];
            left -= len;
        }
        total / self.windows as f64
    }
}

/// Statistics of one equivalence test on the model subset `models`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    /// Panel indices of the models under test.
    pub models: Vec<usize>,
    /// `d̄_{ij}`, aligned with `models`.
    pub dbar_ij: Vec<Vec<f64>>,
    /// `d̄_{i·}`.
    pub dbar: Vec<f64>,
    /// Bootstrap estimate of `Var(d̄_{i·})`.
    pub var: Vec<f64>,
    /// `t_{i·} = d̄_{i·} / √Var`.
    pub t: Vec<f64>,
    pub t_max: f64,
    pub p_value: f64,
    /// 90%, 95% and 99% quantiles of the bootstrap `T*_max`.
    pub quantiles: [f64; 3],
    #[serde(skip)]
    pub t_star: Vec<f64>,
}

/// Relative size below which a bootstrap variance counts as zero.
const ZERO_VAR: f64 = 1e-20;

pub fn bootstrap_tmax(panel: &LossPanel, models: &[usize], resamples: &Resamples) -> Result<StageStats> {
    let m = models.len();
    let w = panel.n_windows();
    if m < 2 {
        return Err(McsError::Invalid("equivalence test needs at least two models".into()));
    }
    if w < 2 || resamples.windows != w {
        return Err(McsError::Invalid(format!("panel has {w} windows, resamples cover {}", resamples.windows)));
    }
    if resamples.replications() == 0 {
        return Err(McsError::Invalid("no bootstrap replications".into()));
    }
    let rows: Vec<&[f64]> = models.iter().map(|&i| panel.losses[i].as_slice()).collect();
    let avg: Vec<f64> = (0..w).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m as f64).collect();
    let d: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&avg).map(|(l, a)| l - a).collect()).collect();
    let dbar: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / w as f64).collect();
    let dbar_ij = (0..m)
        .map(|i| (0..m).map(|j| rows[i].iter().zip(rows[j]).map(|(a, b)| a - b).sum::<f64>() / w as f64).collect())
        .collect();
    let prefix: Vec<Vec<f64>> = d
        .iter()
        .map(|r| {
            let mut p = Vec::with_capacity(w + 1);
            p.push(0.0);
            for &x in r {
                p.push(p.last().unwrap() + x);
            }
            p
        })
        .collect();

    let b_count = resamples.replications();
    let star: Vec<Vec<f64>> =
        (0..b_count).into_par_iter().map(|b| prefix.iter().map(|p| resamples.mean(b, p)).collect()).collect();
    let var: Vec<f64> = (0..m)
        .map(|i| star.iter().map(|s| (s[i] - dbar[i]).powi(2)).sum::<f64>() / b_count as f64)
        .collect();
    let scale = d.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    let zero = |v: f64| v <= ZERO_VAR * scale * scale;
    if scale == 0.0 || var.iter().all(|&v| zero(v)) {
        return Err(McsError::DegeneratePanel);
    }
    let t: Vec<f64> = (0..m)
        .map(|i| {
            if !zero(var[i]) {
                dbar[i] / var[i].sqrt()
            } else if zero(dbar[i].powi(2)) {
                0.0
            } else {
                dbar[i].signum() * f64::INFINITY
            }
        })
        .collect();
    let t_max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_star: Vec<f64> = star
        .iter()
        .map(|s| {
            (0..m)
                .map(|i| if zero(var[i]) { 0.0 } else { (s[i] - dbar[i]) / var[i].sqrt() })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let p_value = t_star.iter().filter(|&&x| x >= t_max).count() as f64 / b_count as f64;
    let mut sorted = t_star.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.90, 0.95, 0.99].map(|q| quantile(&sorted, q));
    Ok(StageStats { models: models.to_vec(), dbar_ij, dbar, var, t, t_max, p_value, quantiles, t_star })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_length_is_cube_root_ceiling() {
        assert_eq!(default_block_length(1), 1);
        assert_eq!(default_block_length(8), 2);
        assert_eq!(default_block_length(9), 3);
        assert_eq!(default_block_length(11), 3);
        assert_eq!(default_block_length(200), 6);
        assert_eq!(default_block_length(400), 8);
    }

    #[test]
    fn resamples_are_contiguous_blocks() {
        let r = Resamples::generate(11, 3, 50, 4);
        for b in 0..50 {
            let idx = r.indices(b);
            assert_eq!(idx.len(), 11);
            for chunk in idx.chunks(3) {
                assert!(chunk.windows(2).all(|p| p[1] == p[0] + 1));
                assert!(*chunk.last().unwrap() < 11);
            }
        }
        assert_eq!(r, Resamples::generate(11, 3, 50, 4));
        assert_ne!(r, Resamples::generate(11, 3, 50, 5));
    }

    #[test]
    fn prefix_mean_matches_expanded_indices() {
        let r = Resamples::generate(10, 3, 20, 1);
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut prefix = vec![0.0];
        for v in &x {
            prefix.push(prefix.last().unwrap() + v);
        }
        for b in 0..20 {
            let direct: f64 = r.indices(b).iter().map(|&i| x[i]).sum::<f64>() / 10.0;
            assert!((r.mean(b, &prefix) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn two_models_are_antisymmetric() {
        let panel = LossPanel::from_rows(vec!["a".into(), "b".into()], vec![vec![1.0, 1.0, 1.0, 1.0], vec![2.0, 3.0, 2.0, 3.0]]).unwrap();
        let r = Resamples::generate(4, 1, 400, 9);
        let s = bootstrap_tmax(&panel, &[0, 1], &r).unwrap();
        assert!((s.dbar_ij[0][1] + 1.5).abs() < 1e-15);
        assert!((s.dbar[0] + 0.75).abs() < 1e-15);
        assert!((s.dbar[1] - 0.75).abs() < 1e-15);
        assert!((s.t[0] + s.t[1]).abs() < 1e-12);
        assert!((s.t_max - s.t[0].abs()).abs() < 1e-12);
    }

    #[test]
    fn period_two_fixture_has_no_variance_under_blocks_of_two() {
        let panel = LossPanel::from_rows(vec!["a".into(), "b".into()], vec![vec![1.0, 1.0, 1.0, 1.0], vec![2.0, 3.0, 2.0, 3.0]]).unwrap();
        let r = Resamples::generate(4, default_block_length(4), 100, 9);
        assert!(matches!(bootstrap_tmax(&panel, &[0, 1], &r), Err(McsError::DegeneratePanel)));
    }

    #[test]
    fn all_equal_losses_are_degenerate() {
        let panel = LossPanel::from_rows(vec!["a".into(), "b".into()], vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let r = Resamples::generate(3, 1, 10, 0);
        assert!(matches!(bootstrap_tmax(&panel, &[0, 1], &r), Err(McsError::DegeneratePanel)));
    }
}
