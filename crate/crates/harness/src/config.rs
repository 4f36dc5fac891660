//! Declarative experiment configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lobscope_core::features::Representation;
use lobscope_core::labels::{validate_horizons, ReturnSpec};
use lobscope_mcs::BootstrapConfig;
use lobscope_nn::optim::AdamConfig;
use lobscope_nn::{Dims, Family, Head, Level, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::calendar::WindowLayout;
use crate::{HarnessError, Result, DATA_ENV};

/// Horizon grid of the single-horizon experiments.
pub const HORIZON_GRID: [usize; 9] = [10, 20, 30, 50, 100, 200, 300, 500, 1000];

/// A model family with its data level, written `family:level` (e.g. `deepvol:L2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelChoice {
    pub family: Family,
    pub level: Level,
}

impl ModelChoice {
    pub const fn new(family: Family, level: Level) -> Self {
        ModelChoice { family, level }
    }

    /// The benchmark plus the six single-horizon deep models.
    pub fn default_set() -> Vec<ModelChoice> {
        vec![
            ModelChoice::new(Family::Benchmark, Level::L2),
            ModelChoice::new(Family::DeepLob, Level::L1),
            ModelChoice::new(Family::DeepOf, Level::L1),
            ModelChoice::new(Family::DeepLob, Level::L2),
            ModelChoice::new(Family::DeepOf, Level::L2),
            ModelChoice::new(Family::DeepVol, Level::L2),
            ModelChoice::new(Family::DeepVolL3, Level::L3),
        ]
    }

    /// Feature representation the model reads.
    pub fn representation(self) -> Option<Representation> {
        match self.family {
            Family::Benchmark => None,
            Family::DeepLob => Some(Representation::RawLob),
            Family::DeepOf => Some(Representation::OrderFlow),
            Family::DeepVol => Some(Representation::Volume),
            Family::DeepVolL3 => Some(Representation::VolumeL3),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.family == Family::Benchmark {
            f.write_str("benchmark")
        } else {
            write!(f, "{}:{}", self.family, self.level)
        }
    }
}

impl FromStr for ModelChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (family, level) = match s.split_once(':') {
            Some((f, l)) => (f.parse::<Family>()?, l.parse::<Level>()?),
            None => {
                let family = s.parse::<Family>()?;
                let level = match family {
                    Family::DeepVolL3 => Level::L3,
                    _ => Level::L2,
                };
                (family, level)
            }
        };
        let choice = ModelChoice { family, level };
        ModelSpec::new(family, level, Head::Single, Dims::default())?;
        Ok(choice)
    }
}

impl TryFrom<String> for ModelChoice {
    type Error = HarnessError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelChoice> for String {
    fn from(m: ModelChoice) -> String {
        m.to_string()
    }
}

/// Look-back length and book geometry shared by every representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    /// Events per input window (`T`).
    pub t: usize,
    /// Book levels (`L`) in the data files and the L2 models.
    pub levels: usize,
    /// Ticks per side of the volume representation (`W`).
    pub window: usize,
    /// Queue slots per tick of the L3 representation (`D`).
    pub depth: usize,
    /// Tick size in price units (10⁻⁴ dollars).
    pub tick: i64,
    /// Half-width `k` of the smoothed-return average.
    pub smoothing: usize,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig { t: 100, levels: 10, window: 20, depth: 10, tick: 100, smoothing: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Widths {
    pub channels: usize,
    pub inception: usize,
    pub hidden: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths { channels: 32, inception: 64, hidden: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let a = AdamConfig::default();
        let t = TrainConfig::default();
        TrainSettings {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            class_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsSettings {
    pub replications: usize,
    /// Block length; the cube-root rule when absent.
    pub block: Option<usize>,
    pub alphas: Vec<f64>,
}

impl Default for McsSettings {
    fn default() -> Self {
        McsSettings { replications: 10_000, block: None, alphas: vec![0.05, 0.01] }
    }
}

impl McsSettings {
    pub fn bootstrap(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig { replications: self.replications, block: self.block, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniversalSplit {
    pub in_sample: Vec<String>,
    pub out_of_sample: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    /// Seconds trimmed from each end of every session.
    pub edge_trim_secs: u64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings { edge_trim_secs: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `<ticker>/<LOBSTER files>`; falls back to `$LOBSCOPE_DATA`.
    pub data_root: Option<PathBuf>,
    pub tickers: Vec<String>,
    /// Restricts the calendar; all dates found for every ticker otherwise.
    pub dates: Option<Vec<String>>,
    pub horizons: Vec<usize>,
    pub layout: WindowLayout,
    pub models: Vec<ModelChoice>,
    /// Adds a seq2seq model over all horizons for every deep model.
    pub seq2seq: bool,
    pub representation: RepresentationConfig,
    pub widths: Widths,
    pub train: TrainSettings,
    pub seed: u64,
    /// Stride between consecutive training anchors.
    pub subsample: usize,
    pub mcs: McsSettings,
    pub universal: Option<UniversalSplit>,
    pub session: SessionSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: None,
            tickers: Vec::new(),
            dates: None,
            horizons: HORIZON_GRID.to_vec(),
            layout: WindowLayout::default(),
            models: ModelChoice::default_set(),
            seq2seq: false,
            representation: RepresentationConfig::default(),
            widths: Widths::default(),
            train: TrainSettings::default(),
            seed: 0,
            subsample: 10,
            mcs: McsSettings::default(),
            universal: None,
            session: SessionSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.subsample == 0 {
            return bad("subsample factor must be at least 1".into());
        }
        validate_horizons(&self.horizons)?;
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(m) = self.models.iter().find(|m| !seen.insert(**m)) {
            return bad(format!("model {m} listed twice"));
        }
        let r = &self.representation;
        if r.t == 0 || r.levels == 0 || r.tick <= 0 {
            return bad("T, levels and tick must be positive".into());
        }
        if self.models.iter().any(|m| m.family == Family::DeepVolL3) && r.depth == 0 {
            return bad("deepVOL(L3) needs a positive queue depth".into());
        }
        for m in &self.models {
            self.model_spec(*m, Head::Single)?;
        }
        if self.mcs.alphas.iter().any(|a| !(0.0..1.0).contains(a)) {
            return bad("MCS levels must lie in [0, 1)".into());
        }
        self.train.to_train_config(0).validate()?;
        if let Some(u) = &self.universal {
            if u.in_sample.is_empty() {
                return bad("universal split needs in-sample tickers".into());
            }
            if u.in_sample.iter().any(|t| u.out_of_sample.contains(t)) {
                return bad("a ticker cannot be both in- and out-of-sample".into());
            }
        }
        Ok(())
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        if let Some(root) = &self.data_root {
            return Ok(root.clone());
        }
        std::env::var_os(DATA_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| HarnessError::Config(format!("no data_root in config and {DATA_ENV} is unset")))
    }

    pub fn return_specs(&self) -> Vec<ReturnSpec> {
        self.horizons
            .iter()
            .map(|&h| ReturnSpec { smoothing: self.representation.smoothing, ..ReturnSpec::smoothed(h) })
            .collect()
    }

    pub fn dims(&self, head: Head) -> Dims {
        let r = &self.representation;
        let k = match head {
            Head::Single => 1,
            Head::Seq2Seq => self.horizons.len(),
        };
        Dims { t: r.t, l: r.levels, w: r.window, d: r.depth, k }
    }

    pub fn model_spec(&self, choice: ModelChoice, head: Head) -> Result<ModelSpec> {
        let w = &self.widths;
        Ok(ModelSpec::new(choice.family, choice.level, head, self.dims(head))?.with_widths(w.channels, w.inception, w.hidden))
    }

    /// Representations any configured model reads.
    pub fn representations(&self) -> Vec<Representation> {
        let mut out: Vec<Representation> = self.models.iter().filter_map(|m| m.representation()).collect();
        out.sort_by_key(|r| *r as u8);
        out.dedup();
        out
    }

    pub fn needs_queue_slots(&self) -> bool {
        self.representations().contains(&Representation::VolumeL3)
    }

    /// Every ticker the run touches, in configuration order.
    pub fn all_tickers(&self) -> Vec<String> {
        let mut out = self.tickers.clone();
        if let Some(u) = &self.universal {
            for t in u.in_sample.iter().chain(&u.out_of_sample) {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig { tickers: vec!["AAA".into()], seed: 7, ..Default::default() };
        cfg.universal = Some(UniversalSplit { in_sample: vec!["AAA".into()], out_of_sample: vec!["BBB".into()] });
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_a_minimal_file() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            tickers = ["X"]
            horizons = [10, 20]
            models = ["benchmark", "deepvol:L2", "deepof:L1", "deepvol-l3"]
            subsample = 5
            [representation]
            t = 20
            "#,
        )
        .unwrap();
        assert_eq!(cfg.models[3], ModelChoice::new(Family::DeepVolL3, Level::L3));
        assert_eq!(cfg.representation.t, 20);
        assert_eq!(cfg.representation.levels, 10);
        assert!(cfg.needs_queue_slots());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("subsample = 0").is_err());
        assert!(ExperimentConfig::from_toml("horizons = [20, 10]").is_err());
        assert!(ExperimentConfig::from_toml("models = [\"deepvol:L1\"]").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
    }
}
