//! Per-window loss panels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{McsError, Result};

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Losses `L_{i,w}` of each model `i` on each window `w` (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPanel {
    pub models: Vec<String>,
    /// `losses[i][w]`.
    pub losses: Vec<Vec<f64>>,
    /// Test samples behind each window's losses.
    pub window_sizes: Vec<usize>,
}

impl LossPanel {
    pub fn new(models: Vec<String>, losses: Vec<Vec<f64>>, window_sizes: Vec<usize>) -> Result<Self> {
        if models.len() != losses.len() {
            return Err(McsError::Invalid(format!("{} model names for {} loss rows", models.len(), losses.len())));
        }
        let w = window_sizes.len();
        if let Some(i) = losses.iter().position(|row| row.len() != w) {
            return Err(McsError::Invalid(format!("model {} has {} windows, expected {w}", models[i], losses[i].len())));
        }
        if losses.iter().flatten().any(|x| !x.is_finite()) {
            return Err(McsError::Invalid("non-finite loss".into()));
        }
        Ok(LossPanel { models, losses, window_sizes })
    }

    /// Panel with unit window sizes.
    pub fn from_rows(models: Vec<String>, losses: Vec<Vec<f64>>) -> Result<Self> {
        let w = losses.first().map_or(0, Vec::len);
        LossPanel::new(models, losses, vec![1; w])
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_windows(&self) -> usize {
        self.window_sizes.len()
    }

    pub fn mean_loss(&self, i: usize) -> f64 {
        self.losses[i].iter().sum::<f64>() / self.n_windows() as f64
    }

    /// Adds `shift[w]` to every model's loss in window `w`.
    pub fn shifted(&self, shift: &[f64]) -> LossPanel {
        let losses = self.losses.iter().map(|row| row.iter().zip(shift).map(|(l, s)| l + s).collect()).collect();
        LossPanel { models: self.models.clone(), losses, window_sizes: self.window_sizes.clone() }
    }

    /// CSV with one row per window: `window,n,<model>…`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["window".to_string(), "n".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for win in 0..self.n_windows() {
            let mut rec = vec![win.to_string(), self.window_sizes[win].to_string()];
            rec.extend(self.losses.iter().map(|row| format!("{:e}", row[win])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| McsError::Io { path: path.into(), source: e })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "window" || &header[1] != "n" {
            return Err(McsError::Invalid("panel header must be window,n,<model>…".into()));
        }
        let models: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut losses = vec![Vec::new(); models.len()];
        let mut sizes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| McsError::Invalid(format!("bad field {k} in {rec:?}")))
            };
            sizes.push(num(1)? as usize);
            for (i, row) in losses.iter_mut().enumerate() {
                row.push(num(i + 2)?);
            }
        }
        LossPanel::new(models, losses, sizes)
    }
}

/// `L_{i,w}` = mean over the window's test samples of `−log p̂_{c_t}`.
///
/// `outputs[i][w]` are model `i`'s predicted distributions on window `w`,
/// aligned with `labels[w]`.
pub fn window_losses(models: Vec<String>, outputs: &[Vec<Vec<[f64; 3]>>], labels: &[Vec<u8>]) -> Result<LossPanel> {
    let mut losses = Vec::with_capacity(outputs.len());
    for (i, per_window) in outputs.iter().enumerate() {
        if per_window.len() != labels.len() {
            return Err(McsError::Invalid(format!("model {i}: {} windows of output for {} label windows", per_window.len(), labels.len())));
        }
        let mut row = Vec::with_capacity(labels.len());
        for (w, (probs, ys)) in per_window.iter().zip(labels).enumerate() {
            if ys.is_empty() {
                return Err(McsError::Invalid(format!("window {w} has no test samples")));
            }
            if probs.len() != ys.len() {
                return Err(McsError::Invalid(format!("model {i} window {w}: {} predictions, {} labels", probs.len(), ys.len())));
            }
            let total: f64 = probs.iter().zip(ys).map(|(p, &y)| -p[y as usize].max(PROB_FLOOR).ln()).sum();
            row.push(total / ys.len() as f64);
        }
        losses.push(row);
    }
    LossPanel::new(models, losses, labels.iter().map(Vec::len).collect())
}
