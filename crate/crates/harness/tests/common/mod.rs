#![allow(dead_code)]

use std::path::Path;

use chrono::NaiveDate;
use lobscope_harness::config::{McsSettings, RepresentationConfig, SessionSettings, TrainSettings, Widths};
use lobscope_harness::synth::{business_days, synth_universe, SynthSpec};
use lobscope_harness::{ExperimentConfig, ModelChoice};

/// A short synthetic session: about `events` rows over 40 minutes.
pub fn small_spec(events: usize, seed: u64) -> SynthSpec {
    let session_secs = 2400;
    SynthSpec {
        event_rate: events as f64 / session_secs as f64,
        session_secs,
        levels: 5,
        hidden_levels: 5,
        seed,
        ..SynthSpec::default()
    }
}

pub fn days(n: usize) -> Vec<NaiveDate> {
    business_days(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), n)
}

/// Writes `weeks` weeks of sessions per ticker under `root`.
pub fn write_universe(root: &Path, tickers: &[&str], coefs: &[f64], weeks: usize, events: usize, seed: u64) {
    let tickers: Vec<String> = tickers.iter().map(|t| t.to_string()).collect();
    synth_universe(root, &tickers, coefs, &days(5 * weeks), &small_spec(events, seed)).unwrap();
}

/// A deliberately tiny experiment over the sessions in `root`.
pub fn small_config(root: &Path, tickers: &[&str], models: &[&str], horizons: &[usize]) -> ExperimentConfig {
    ExperimentConfig {
        data_root: Some(root.to_path_buf()),
        tickers: tickers.iter().map(|t| t.to_string()).collect(),
        horizons: horizons.to_vec(),
        models: models.iter().map(|m| m.parse::<ModelChoice>().unwrap()).collect(),
        representation: RepresentationConfig { t: 10, levels: 5, window: 5, depth: 3, tick: 100, smoothing: 2 },
        widths: Widths { channels: 4, inception: 4, hidden: 8 },
        train: TrainSettings { lr: 0.01, batch_size: 64, max_epochs: 2, patience: 1, ..TrainSettings::default() },
        seed: 7,
        subsample: 10,
        mcs: McsSettings { replications: 500, block: None, alphas: vec![0.05, 0.01] },
        session: SessionSettings { edge_trim_secs: 60 },
        ..ExperimentConfig::default()
    }
}
