use std::fs;

use lobscope_harness::experiment::{McsSummary, RunKind};
use lobscope_harness::report::{membership_grid, pvalue_grid};
use lobscope_harness::{emit_report, CellResult, ExperimentResult, ReportFormat};
use lobscope_mcs::LossPanel;

const MODELS: [&str; 3] = ["benchmark", "deepA", "deepB"];

fn cell(ticker: &str, horizon: usize, p: Option<[f64; 3]>) -> CellResult {
    let models: Vec<String> = MODELS.iter().map(|m| m.to_string()).collect();
    let panel = LossPanel::new(models.clone(), vec![vec![1.1, 1.0]; 3], vec![50, 60]).unwrap();
    CellResult {
        ticker: ticker.into(),
        horizon,
        in_sample: None,
        windows: vec![0, 1],
        panel,
        mcs: p.map(|p| McsSummary { models, p_values: p.to_vec(), elimination: vec![0, 1, 2], block: 2, replications: 100, seed: 0 }),
        notes: Vec::new(),
    }
}

fn result(tickers: &[&str], horizons: &[usize], cells: Vec<CellResult>) -> ExperimentResult {
    let mut r = ExperimentResult::empty(RunKind::PerTicker, horizons.to_vec(), vec![0.05, 0.01]);
    r.models = MODELS.iter().map(|m| m.to_string()).collect();
    r.tickers = tickers.iter().map(|t| t.to_string()).collect();
    r.cells = cells;
    r
}

#[test]
fn empty_result_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let r = ExperimentResult::empty(RunKind::PerTicker, vec![10, 20], vec![0.05, 0.01]);
    let files = emit_report(&r, dir.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
    assert_eq!(files.len(), 7);
    let read = |n: &str| fs::read_to_string(dir.path().join(n)).unwrap();
    assert_eq!(read("pvalues.csv"), "ticker,h10,h20\n");
    assert_eq!(read("membership.csv"), "model,alpha_0.05,alpha_0.01\n");
    assert_eq!(read("losses.csv"), "ticker,horizon,window,test_samples,model,loss\n");
    assert_eq!(read("mcs.csv"), "ticker,horizon,model,p_mcs,in_0.05,in_0.01\n");
    let back = ExperimentResult::read_json(&dir.path().join("results.json")).unwrap();
    assert_eq!(back, r);
}

#[test]
fn one_ticker_nine_horizons_is_one_by_nine() {
    let horizons = [10, 20, 30, 50, 100, 200, 300, 500, 1000];
    let cells = horizons.iter().map(|&h| cell("AAA", h, Some([h as f64 / 1000.0, 1.0, 0.5]))).collect();
    let r = result(&["AAA"], &horizons, cells);
    let grid = pvalue_grid(&r);
    assert_eq!(grid.rows.len(), 1);
    assert_eq!(grid.rows[0].p_values.len(), 9);
    assert_eq!(grid.rows[0].p_values[4], Some(0.1));

    let dir = tempfile::tempdir().unwrap();
    emit_report(&r, dir.path(), &[ReportFormat::Csv]).unwrap();
    let text = fs::read_to_string(dir.path().join("pvalues.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 10);
    assert_eq!(lines[1].split(',').count(), 10);
    assert!(lines[1].starts_with("AAA,0.01,0.02,"));
}

#[test]
fn membership_counts_predictable_cells_only() {
    // Predictable at 0.05: cells 1 and 2. At 0.01: cell 1.
    let cells = vec![
        cell("AAA", 10, Some([0.001, 0.004, 0.03])),
        cell("AAA", 20, Some([0.02, 0.5, 1.0])),
        cell("BBB", 10, Some([0.4, 1.0, 0.2])),
        cell("BBB", 20, None),
    ];
    let grid = membership_grid(&result(&["AAA", "BBB"], &[10, 20], cells));
    assert_eq!(grid.predictable, vec![2, 1]);
    let row = |m: &str| grid.rows.iter().find(|r| r.model == m).unwrap();
    assert_eq!(row("benchmark").counts, vec![0, 0]);
    assert_eq!(row("deepA").counts, vec![1, 0]);
    assert_eq!(row("deepB").counts, vec![1, 1]);
    assert_eq!(row("deepA").percent, vec![Some(50.0), Some(0.0)]);
    assert_eq!(row("deepB").percent, vec![Some(50.0), Some(100.0)]);
    assert_eq!(row("benchmark").percent, vec![Some(0.0), Some(0.0)]);
}

#[test]
fn membership_is_undefined_without_predictable_cells() {
    let grid = membership_grid(&result(&["AAA"], &[10], vec![cell("AAA", 10, Some([0.9, 1.0, 0.3]))]));
    assert_eq!(grid.predictable, vec![0, 0]);
    assert!(grid.rows.iter().all(|r| r.percent == vec![None, None]));
}

#[test]
fn missing_mcs_leaves_blank_cells() {
    let r = result(&["AAA"], &[10, 20], vec![cell("AAA", 10, Some([0.5, 1.0, 0.2])), cell("AAA", 20, None)]);
    let dir = tempfile::tempdir().unwrap();
    emit_report(&r, dir.path(), &[ReportFormat::Csv]).unwrap();
    let text = fs::read_to_string(dir.path().join("pvalues.csv")).unwrap();
    assert_eq!(text, "ticker,h10,h20\nAAA,0.5,\n");
    let mcs = fs::read_to_string(dir.path().join("mcs.csv")).unwrap();
    assert_eq!(mcs.lines().count(), 4);
    assert!(mcs.contains("AAA,10,deepB,0.2,true,true"));
    let losses = fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 2 * 2 * 3);
}
