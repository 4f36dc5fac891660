//! Stock selection by liquidity score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Daily-average liquidity characteristics of one ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characteristics {
    pub ticker: String,
    pub updates: f64,
    pub trades: f64,
    pub price_changes: f64,
    pub spread: f64,
}

impl Characteristics {
    /// Reads a CSV with columns `ticker,updates,trades,price_changes,spread`.
    pub fn read_csv(path: &Path) -> Result<Vec<Characteristics>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks min-max scaled to `[0, 1]`; the highest rank scores 1. A column
/// without spread scores 0.5 throughout.
pub fn rank_scores(values: &[f64]) -> Vec<f64> {
    let ranks = average_ranks(values);
    let lo = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ranks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ranks.iter().map(|&r| if hi > lo { (r - lo) / (hi - lo) } else { 0.5 }).collect()
}

/// Mean of the four characteristic scores per ticker.
pub fn liquidity_scores(table: &[Characteristics]) -> Vec<f64> {
    let cols: [Vec<f64>; 4] = [
        rank_scores(&table.iter().map(|c| c.updates).collect::<Vec<_>>()),
        rank_scores(&table.iter().map(|c| c.trades).collect::<Vec<_>>()),
        rank_scores(&table.iter().map(|c| c.price_changes).collect::<Vec<_>>()),
        rank_scores(&table.iter().map(|c| c.spread).collect::<Vec<_>>()),
    ];
    (0..table.len()).map(|i| cols.iter().map(|c| c[i]).sum::<f64>() / 4.0).collect()
}

/// The `n` tickers at evenly spaced quantiles of the liquidity score, in
/// ascending score order (ties broken by ticker).
pub fn select_universe(table: &[Characteristics], n: usize) -> Result<Vec<String>> {
    if n == 0 || n > table.len() {
        return Err(HarnessError::Invalid(format!("cannot select {n} of {} tickers", table.len())));
    }
    if table.iter().any(|c| ![c.updates, c.trades, c.price_changes, c.spread].iter().all(|v| v.is_finite())) {
        return Err(HarnessError::Invalid("non-finite characteristic".into()));
    }
    let scores = liquidity_scores(table);
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| table[a].ticker.cmp(&table[b].ticker)));
    let last = (table.len() - 1) as f64;
    let picks: Vec<usize> = if n == 1 {
        vec![(last / 2.0).round() as usize]
    } else {
        (0..n).map(|i| (i as f64 * last / (n - 1) as f64).round() as usize).collect()
    };
    Ok(picks.into_iter().map(|p| table[order[p]].ticker.clone()).collect())
}
