//! CSV / JSON report grids.
//!
//! * `pvalues`: benchmark MCS p-value per ticker (rows) and horizon (columns);
//! * `membership`: per model and level α, the percentage of predictable cells
//!   (benchmark p-value below α) whose α-MCS contains the model;
//! * `losses` and `mcs`: long-format series of window losses and MCS p-values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::experiment::{ExperimentResult, RunKind};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(HarnessError::Invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// Benchmark p-values, `None` where the MCS did not run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PValueGrid {
    pub horizons: Vec<usize>,
    pub rows: Vec<PValueRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PValueRow {
    pub ticker: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_sample: Option<bool>,
    pub p_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipGrid {
    pub alphas: Vec<f64>,
    /// Predictable cells per level.
    pub predictable: Vec<usize>,
    pub rows: Vec<MembershipRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipRow {
    pub model: String,
    pub counts: Vec<usize>,
    /// `None` when no cell is predictable at that level.
    pub percent: Vec<Option<f64>>,
}

pub fn pvalue_grid(result: &ExperimentResult) -> PValueGrid {
    let rows = result
        .tickers
        .iter()
        .map(|t| {
            let cells: Vec<_> = result.horizons.iter().map(|&h| result.cell(t, h)).collect();
            PValueRow {
                ticker: t.clone(),
                in_sample: cells.iter().flatten().find_map(|c| c.in_sample),
                p_values: cells.iter().map(|c| c.and_then(|c| c.benchmark_p())).collect(),
            }
        })
        .collect();
    PValueGrid { horizons: result.horizons.clone(), rows }
}

pub fn membership_grid(result: &ExperimentResult) -> MembershipGrid {
    let predictable: Vec<usize> =
        result.alphas.iter().map(|&a| result.cells.iter().filter(|c| c.predictable(a)).count()).collect();
    let rows = result
        .models
        .iter()
        .map(|m| {
            let counts: Vec<usize> = result
                .alphas
                .iter()
                .map(|&a| {
                    result
                        .cells
                        .iter()
                        .filter(|c| c.predictable(a) && c.p_value(m).is_some_and(|p| p >= a))
                        .count()
                })
                .collect();
            let percent = counts
                .iter()
                .zip(&predictable)
                .map(|(&k, &n)| (n > 0).then(|| 100.0 * k as f64 / n as f64))
                .collect();
            MembershipRow { model: m.clone(), counts, percent }
        })
        .collect();
    MembershipGrid { alphas: result.alphas.clone(), predictable, rows }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn write(path: PathBuf, text: String, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    out.push(path);
    Ok(())
}

fn pvalues_csv(grid: &PValueGrid, universal: bool) -> String {
    let mut s = String::from("ticker");
    if universal {
        s.push_str(",in_sample");
    }
    for h in &grid.horizons {
        let _ = write!(s, ",h{h}");
    }
    s.push('\n');
    for r in &grid.rows {
        s.push_str(&r.ticker);
        if universal {
            let _ = write!(s, ",{}", r.in_sample.map_or_else(String::new, |b| b.to_string()));
        }
        for p in &r.p_values {
            let _ = write!(s, ",{}", opt(*p));
        }
        s.push('\n');
    }
    s
}

fn membership_csv(grid: &MembershipGrid) -> String {
    let mut s = String::from("model");
    for a in &grid.alphas {
        let _ = write!(s, ",alpha_{a}");
    }
    s.push('\n');
    for r in &grid.rows {
        s.push_str(&r.model);
        for p in &r.percent {
            let _ = write!(s, ",{}", opt(*p));
        }
        s.push('\n');
    }
    s
}

fn losses_csv(result: &ExperimentResult) -> String {
    let mut s = String::from("ticker,horizon,window,test_samples,model,loss\n");
    for c in &result.cells {
        for (k, w) in c.windows.iter().enumerate() {
            for (m, name) in c.panel.models.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{},{}", c.ticker, c.horizon, w, c.panel.window_sizes[k], name, c.panel.losses[m][k]);
            }
        }
    }
    s
}

fn mcs_csv(result: &ExperimentResult) -> String {
    let mut s = String::from("ticker,horizon,model,p_mcs");
    for a in &result.alphas {
        let _ = write!(s, ",in_{a}");
    }
    s.push('\n');
    for c in &result.cells {
        let Some(m) = &c.mcs else { continue };
        for (name, p) in m.models.iter().zip(&m.p_values) {
            let _ = write!(s, "{},{},{},{}", c.ticker, c.horizon, name, p);
            for a in &result.alphas {
                let _ = write!(s, ",{}", *p >= *a);
            }
            s.push('\n');
        }
    }
    s
}

/// Writes the report grids into `dir` and returns the paths written.
pub fn emit_report(result: &ExperimentResult, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let pv = pvalue_grid(result);
    let mem = membership_grid(result);
    let universal = result.kind == RunKind::Universal;
    let mut out = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                write(dir.join("pvalues.csv"), pvalues_csv(&pv, universal), &mut out)?;
                write(dir.join("membership.csv"), membership_csv(&mem), &mut out)?;
                write(dir.join("losses.csv"), losses_csv(result), &mut out)?;
                write(dir.join("mcs.csv"), mcs_csv(result), &mut out)?;
            }
            ReportFormat::Json => {
                write(dir.join("pvalues.json"), serde_json::to_string_pretty(&pv)?, &mut out)?;
                write(dir.join("membership.json"), serde_json::to_string_pretty(&mem)?, &mut out)?;
                write(dir.join("results.json"), serde_json::to_string_pretty(result)?, &mut out)?;
            }
        }
    }
    Ok(out)
}
