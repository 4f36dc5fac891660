//! Sequential elimination and MCS p-values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_tmax, default_block_length, BootstrapConfig, Resamples, StageStats};
use crate::panel::LossPanel;
use crate::{McsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    /// Panel indices of the surviving models.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub models: Vec<String>,
    pub replications: usize,
    pub block: usize,
    pub seed: u64,
    /// Panel indices in elimination order; the last entry survives every test.
    pub elimination: Vec<usize>,
    /// MCS p-value per panel index.
    pub p_values: Vec<f64>,
    pub stages: Vec<StageStats>,
    pub sets: Vec<ConfidenceSet>,
}

impl McsResult {
    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.models.iter().position(|m| m == name).map(|i| self.p_values[i])
    }

    /// Models with MCS p-value at least `alpha`.
    pub fn superior_set(&self, alpha: f64) -> Vec<usize> {
        (0..self.models.len()).filter(|&i| self.p_values[i] >= alpha).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| McsError::Io { path: path.into(), source: e })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| McsError::Io { path: path.into(), source: e })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `model,p_mcs,eliminated,in_<alpha>…` with `eliminated` the 1-based
    /// elimination rank (the survivor ranks last).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["model".to_string(), "p_mcs".to_string(), "eliminated".to_string()];
        header.extend(self.sets.iter().map(|s| format!("in_{}", s.alpha)));
        w.write_record(&header)?;
        for (i, name) in self.models.iter().enumerate() {
            let rank = self.elimination.iter().position(|&e| e == i).map_or(0, |r| r + 1);
            let mut rec = vec![name.clone(), format!("{}", self.p_values[i]), rank.to_string()];
            rec.extend(self.sets.iter().map(|s| s.members.contains(&i).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| McsError::Io { path: path.into(), source: e })
    }
}

/// Runs the elimination sequence to exhaustion. Each stage tests equivalence
/// of the surviving models, then removes `argmax t_{i·}` (ties to the lowest
/// index). A model's MCS p-value is the largest stage p-value up to its
/// removal; the final survivor gets 1. All stages share one resample set.
pub fn mcs_run(panel: &LossPanel, alphas: &[f64], cfg: &BootstrapConfig) -> Result<McsResult> {
    let n = panel.n_models();
    let w = panel.n_windows();
    if n == 0 {
        return Err(McsError::Invalid("empty model set".into()));
    }
    if w < 2 {
        return Err(McsError::Invalid(format!("need at least two windows, have {w}")));
    }
    if alphas.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
        return Err(McsError::Invalid("confidence levels must lie in [0, 1]".into()));
    }
    let block = cfg.block.unwrap_or_else(|| default_block_length(w)).clamp(1, w);
    let mut p_values = vec![0.0; n];
    let mut elimination = Vec::with_capacity(n);
    let mut stages = Vec::new();
    if n > 1 {
        let resamples = Resamples::generate(w, block, cfg.replications, cfg.seed);
        let mut alive: Vec<usize> = (0..n).collect();
        let mut running = 0.0f64;
        while alive.len() > 1 {
            let stage = bootstrap_tmax(panel, &alive, &resamples)?;
            running = running.max(stage.p_value);
            let mut worst = 0;
            for k in 1..alive.len() {
                if stage.t[k] > stage.t[worst] {
                    worst = k;
                }
            }
            let out = alive.remove(worst);
            p_values[out] = running;
            elimination.push(out);
            stages.push(stage);
        }
        elimination.push(alive[0]);
        p_values[alive[0]] = 1.0;
    } else {
        elimination.push(0);
        p_values[0] = 1.0;
    }
    let sets = alphas
        .iter()
        .map(|&alpha| ConfidenceSet { alpha, members: (0..n).filter(|&i| p_values[i] >= alpha).collect() })
        .collect();
    Ok(McsResult {
        models: panel.models.clone(),
        replications: cfg.replications,
        block,
        seed: cfg.seed,
        elimination,
        p_values,
        stages,
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_model_convention() {
        let panel = LossPanel::from_rows(vec!["only".into()], vec![vec![1.0, 2.0, 0.5]]).unwrap();
        let r = mcs_run(&panel, &[0.05], &BootstrapConfig::default()).unwrap();
        assert_eq!(r.p_values, vec![1.0]);
        assert_eq!(r.sets[0].members, vec![0]);
        assert!(r.stages.is_empty());
    }

    #[test]
    fn two_models_reduce_to_one_test() {
        let panel = LossPanel::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 1.2, 0.9, 1.1, 1.0, 1.3], vec![1.1, 1.0, 1.2, 1.3, 1.1, 1.2]],
        )
        .unwrap();
        let cfg = BootstrapConfig { replications: 1000, block: None, seed: 3 };
        let r = mcs_run(&panel, &[0.05, 0.5], &cfg).unwrap();
        assert_eq!(r.stages.len(), 1);
        let loser = r.elimination[0];
        assert_eq!(r.p_values[loser], r.stages[0].p_value);
        assert_eq!(r.p_values[r.elimination[1]], 1.0);
        assert_eq!(loser, 1);
    }
}
