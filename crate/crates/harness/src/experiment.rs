//! Rolling-window experiments: per-ticker and universal training, loss
//! panels and the MCS over each (ticker, horizon) cell.

use lobscope_mcs::{mcs_run, LossPanel};
use lobscope_nn::loss::cce;
use lobscope_nn::train::{predict, train_model};
use lobscope_nn::checkpoint::Checkpoint;
use lobscope_nn::{Dataset, Family, Head, ModelSpec};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{build_windows, WindowSpec};
use crate::config::{ExperimentConfig, ModelChoice};
use crate::data::{experiment_calendar, InputKind, TickerStore, WindowData};
use crate::{mix_seed, HarnessError, Result};

/// A model of the comparison set.
#[derive(Debug, Clone)]
pub struct Entry {
    pub label: String,
    pub spec: ModelSpec,
    pub kind: Option<InputKind>,
}

impl Entry {
    fn multi(&self) -> bool {
        self.spec.head == Head::Seq2Seq
    }
}

/// The configured models, followed by their seq2seq variants when enabled.
pub fn lineup(cfg: &ExperimentConfig) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut heads = vec![Head::Single];
    if cfg.seq2seq {
        heads.push(Head::Seq2Seq);
    }
    for head in heads {
        for &m in &cfg.models {
            if head == Head::Seq2Seq && m.family == Family::Benchmark {
                continue;
            }
            let spec = cfg.model_spec(m, head)?;
            out.push(Entry { label: spec.label(), kind: InputKind::of(&spec), spec });
        }
    }
    Ok(out)
}

/// Input kinds the lineup reads.
pub fn input_kinds(entries: &[Entry]) -> Vec<InputKind> {
    let mut kinds: Vec<InputKind> = Vec::new();
    for k in entries.iter().filter_map(|e| e.kind) {
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    kinds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsSummary {
    pub models: Vec<String>,
    pub p_values: Vec<f64>,
    /// Model indices in elimination order; the last survives.
    pub elimination: Vec<usize>,
    pub block: usize,
    pub replications: usize,
    pub seed: u64,
}

/// Loss panel and MCS outcome of one (ticker, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub ticker: String,
    pub horizon: usize,
    /// Set for universal runs.
    pub in_sample: Option<bool>,
    /// Window indices kept in the panel.
    pub windows: Vec<usize>,
    pub panel: LossPanel,
    pub mcs: Option<McsSummary>,
    pub notes: Vec<String>,
}

impl CellResult {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        let m = self.mcs.as_ref()?;
        m.models.iter().position(|x| x == model).map(|i| m.p_values[i])
    }

    pub fn benchmark_p(&self) -> Option<f64> {
        self.p_value("benchmark")
    }

    /// Predictability at level `alpha`: the benchmark is outside the MCS.
    pub fn predictable(&self, alpha: f64) -> bool {
        self.benchmark_p().is_some_and(|p| p < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowAudit {
    pub window: usize,
    /// Pooled training and validation samples per in-sample ticker.
    pub per_ticker: Vec<(String, usize)>,
    pub pooled: usize,
    /// Pooled samples whose origin is not an in-sample ticker.
    pub foreign: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    PerTicker,
    Universal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: RunKind,
    pub models: Vec<String>,
    pub tickers: Vec<String>,
    pub horizons: Vec<usize>,
    pub alphas: Vec<f64>,
    pub windows: Vec<WindowSpec>,
    pub cells: Vec<CellResult>,
    pub audit: Vec<WindowAudit>,
}

impl ExperimentResult {
    pub fn empty(kind: RunKind, horizons: Vec<usize>, alphas: Vec<f64>) -> Self {
        ExperimentResult {
            kind,
            models: Vec::new(),
            tickers: Vec::new(),
            horizons,
            alphas,
            windows: Vec::new(),
            cells: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn cell(&self, ticker: &str, horizon: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.ticker == ticker && c.horizon == horizon)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Training inputs of one job: datasets for the model's horizons.
struct JobData {
    train: Dataset,
    val: Dataset,
}

/// Losses of one window: `losses[test set][horizon][model]`, `None` when
/// the model failed to train.
struct WindowOutcome {
    losses: Vec<Vec<Vec<Option<f64>>>>,
    sizes: Vec<usize>,
    notes: Vec<String>,
}

/// Horizon indices each job covers: one per single-horizon model and
/// horizon, one per seq2seq model.
fn jobs(entries: &[Entry], horizons: usize) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for (m, e) in entries.iter().enumerate() {
        if e.multi() {
            out.push((m, (0..horizons).collect()));
        } else {
            out.extend((0..horizons).map(|h| (m, vec![h])));
        }
    }
    out
}

/// Per-horizon unweighted cross-entropy of `spec` on `test`.
fn test_losses(spec: &ModelSpec, params: &lobscope_nn::ParamSet<f32>, test: &Dataset) -> Result<Vec<f64>> {
    let probs = predict(spec, params, test)?;
    let k = test.horizons;
    Ok((0..k)
        .map(|h| {
            let rows: Vec<[f64; 3]> = probs.iter().skip(h).step_by(k).copied().collect();
            cce(&rows, &test.labels(h)).loss
        })
        .collect())
}

/// Builds one job's training data and its test datasets.
type BuildJob<'a> = dyn Fn(&Entry, &[usize]) -> Result<(JobData, Vec<Dataset>)> + Sync + 'a;

/// A window's outcome and test size, or why it failed.
type WindowResult<'a> = std::result::Result<(&'a WindowOutcome, usize), String>;

/// Trains every job and scores it on each test set.
fn run_window(
    cfg: &ExperimentConfig,
    entries: &[Entry],
    scope: &str,
    window: usize,
    build: &BuildJob<'_>,
    n_tests: usize,
    sizes: Vec<usize>,
) -> WindowOutcome {
    let h = cfg.horizons.len();
    let jobs = jobs(entries, h);
    let results: Vec<std::result::Result<Vec<Vec<f64>>, String>> = jobs
        .par_iter()
        .map(|(m, hs)| {
            let e = &entries[*m];
            let tag = hs.iter().map(|&i| cfg.horizons[i].to_string()).collect::<Vec<_>>().join("+");
            let seed = mix_seed(cfg.seed, &["train", scope, &window.to_string(), &e.label, &tag]);
            let run = || -> Result<Vec<Vec<f64>>> {
                let (data, tests) = build(e, hs)?;
                let outcome = train_model::<f32>(&e.spec, &data.train, &data.val, &cfg.train.to_train_config(seed))?;
                if let Some(last) = outcome.history.last() {
                    log::debug!(
                        "{scope} window {window} {} h={tag}: {} samples, epoch {} of {}, val loss {:.4}",
                        e.label,
                        data.train.len(),
                        outcome.best_epoch,
                        last.epoch,
                        last.val_loss
                    );
                }
                tests.iter().map(|t| test_losses(&e.spec, &outcome.params, t)).collect()
            };
            run().map_err(|err| format!("{} (h={tag}): {err}", e.label))
        })
        .collect();
    let mut losses = vec![vec![vec![None; entries.len()]; h]; n_tests];
    let mut notes = Vec::new();
    for ((m, hs), r) in jobs.iter().zip(results) {
        match r {
            Ok(per_test) => {
                for (t, row) in per_test.into_iter().enumerate() {
                    for (&hi, loss) in hs.iter().zip(row) {
                        losses[t][hi][*m] = Some(loss);
                    }
                }
            }
            Err(msg) => {
                warn!("{scope} window {window}: training failed: {msg}");
                notes.push(format!("window {window}: {msg}"));
            }
        }
    }
    WindowOutcome { losses, sizes, notes }
}

/// Builds one cell per horizon from the window outcomes of one test ticker,
/// dropping windows where any model lacks a loss.
fn assemble(
    cfg: &ExperimentConfig,
    entries: &[Entry],
    ticker: &str,
    in_sample: Option<bool>,
    outcomes: &[(usize, WindowResult<'_>)],
) -> Result<Vec<CellResult>> {
    let models: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    let mut cells = Vec::new();
    for (hi, &horizon) in cfg.horizons.iter().enumerate() {
        let mut losses = vec![Vec::new(); entries.len()];
        let mut sizes = Vec::new();
        let mut windows = Vec::new();
        let mut notes = Vec::new();
        for (w, outcome) in outcomes {
            match outcome {
                Err(msg) => notes.push(format!("window {w} dropped: {msg}")),
                Ok((o, t)) => {
                    let row = &o.losses[*t][hi];
                    if row.iter().all(Option::is_some) {
                        for (m, l) in row.iter().enumerate() {
                            losses[m].push(l.expect("checked"));
                        }
                        sizes.push(o.sizes[*t]);
                        windows.push(*w);
                    } else {
                        let failed: Vec<&str> =
                            row.iter().zip(&models).filter(|(l, _)| l.is_none()).map(|(_, n)| n.as_str()).collect();
                        notes.push(format!("window {w} dropped for every model: {} failed", failed.join(", ")));
                    }
                    notes.extend(o.notes.iter().cloned());
                }
            }
        }
        notes.dedup();
        let panel = LossPanel::new(models.clone(), losses, sizes)?;
        let mcs = if panel.n_windows() >= 2 {
            let boot = cfg.mcs.bootstrap(mix_seed(cfg.seed, &["mcs", ticker, &horizon.to_string()]));
            match mcs_run(&panel, &cfg.mcs.alphas, &boot) {
                Ok(r) => Some(McsSummary {
                    models: r.models,
                    p_values: r.p_values,
                    elimination: r.elimination,
                    block: r.block,
                    replications: r.replications,
                    seed: r.seed,
                }),
                Err(e) => {
                    notes.push(format!("MCS not run: {e}"));
                    None
                }
            }
        } else {
            notes.push(format!("MCS not run: {} usable windows", panel.n_windows()));
            None
        };
        cells.push(CellResult { ticker: ticker.to_string(), horizon, in_sample, windows, panel, mcs, notes });
    }
    Ok(cells)
}

fn setup(cfg: &ExperimentConfig) -> Result<(Vec<Entry>, crate::calendar::Calendar, Vec<WindowSpec>)> {
    cfg.validate()?;
    let entries = lineup(cfg)?;
    let calendar = experiment_calendar(cfg)?;
    let windows = build_windows(&calendar, &cfg.layout, cfg.seed)?;
    Ok((entries, calendar, windows))
}

fn datasets(cfg: &ExperimentConfig, wd: &WindowData, e: &Entry, hs: &[usize]) -> Result<(Dataset, Dataset, Dataset)> {
    let mut train = wd.dataset(&wd.train, e.kind, hs, cfg)?;
    let mut val = wd.dataset(&wd.val, e.kind, hs, cfg)?;
    let test = wd.dataset(&wd.test, e.kind, hs, cfg)?;
    if e.spec.family == Family::Benchmark {
        // The benchmark is the class distribution of the whole training-validation set.
        train.extend(&val);
        val = Dataset::new(val.sample_shape.clone(), val.horizons);
    }
    Ok((train, val, test))
}

/// Trains every model per ticker and window, evaluates on the test week and
/// runs the MCS on each (ticker, horizon) panel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let (entries, calendar, windows) = setup(cfg)?;
    let kinds = input_kinds(&entries);
    info!("{} tickers, {} windows, {} models", cfg.tickers.len(), windows.len(), entries.len());
    let per_ticker: Vec<Result<Vec<CellResult>>> = cfg
        .tickers
        .par_iter()
        .enumerate()
        .map(|(ti, ticker)| {
            let mut store = TickerStore::new(cfg, &calendar, ticker, ti as u32, kinds.clone())?;
            let mut outcomes = Vec::new();
            for spec in &windows {
                let outcome = match store.window_data(spec) {
                    Ok(wd) => {
                        let build = |e: &Entry, hs: &[usize]| {
                            let (train, val, test) = datasets(cfg, &wd, e, hs)?;
                            Ok((JobData { train, val }, vec![test]))
                        };
                        Ok(run_window(cfg, &entries, ticker, spec.index, &build, 1, vec![wd.test.n]))
                    }
                    Err(e) => {
                        warn!("{ticker} window {}: {e}", spec.index);
                        Err(e.to_string())
                    }
                };
                outcomes.push((spec.index, outcome));
            }
            let refs: Vec<_> = outcomes.iter().map(|(w, o)| (*w, o.as_ref().map(|o| (o, 0)).map_err(Clone::clone))).collect();
            assemble(cfg, &entries, ticker, None, &refs)
        })
        .collect();
    let mut cells = Vec::new();
    for r in per_ticker {
        cells.extend(r?);
    }
    Ok(ExperimentResult {
        kind: RunKind::PerTicker,
        models: entries.iter().map(|e| e.label.clone()).collect(),
        tickers: cfg.tickers.clone(),
        horizons: cfg.horizons.clone(),
        alphas: cfg.mcs.alphas.clone(),
        windows,
        cells,
        audit: Vec::new(),
    })
}

/// Trains one model per window on the pooled in-sample tickers (each with its
/// own class thresholds) and evaluates it on every ticker's test week.
pub fn run_universal(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let split = cfg
        .universal
        .clone()
        .ok_or_else(|| HarnessError::Config("universal run without an in/out-of-sample split".into()))?;
    let (entries, calendar, windows) = setup(cfg)?;
    let kinds = input_kinds(&entries);
    let tickers: Vec<String> = split.in_sample.iter().chain(&split.out_of_sample).cloned().collect();
    let n_in = split.in_sample.len();
    let mut stores = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| TickerStore::new(cfg, &calendar, t, i as u32, kinds.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes: Vec<(usize, std::result::Result<WindowOutcome, String>)> = Vec::new();
    let mut audit = Vec::new();
    for spec in &windows {
        let data: Vec<Result<WindowData>> = stores.par_iter_mut().map(|s| s.window_data(spec)).collect();
        let data = match data.into_iter().collect::<Result<Vec<_>>>() {
            Ok(d) => d,
            Err(e) => {
                warn!("universal window {}: {e}", spec.index);
                outcomes.push((spec.index, Err(e.to_string())));
                continue;
            }
        };
        let mut per_ticker = Vec::new();
        let mut foreign = 0;
        for wd in &data[..n_in] {
            per_ticker.push((wd.ticker.clone(), wd.train.n + wd.val.n));
            foreign += wd.train.origin.iter().chain(&wd.val.origin).filter(|o| o.ticker as usize >= n_in).count();
        }
        let pooled = per_ticker.iter().map(|(_, n)| n).sum();
        audit.push(WindowAudit { window: spec.index, per_ticker, pooled, foreign });
        if foreign > 0 {
            return Err(HarnessError::Invalid(format!("window {}: out-of-sample data in the pooled set", spec.index)));
        }
        let build = |e: &Entry, hs: &[usize]| -> Result<(JobData, Vec<Dataset>)> {
            let mut train: Option<Dataset> = None;
            let mut val: Option<Dataset> = None;
            let mut tests = Vec::with_capacity(data.len());
            for (i, wd) in data.iter().enumerate() {
                let (tr, va, te) = datasets(cfg, wd, e, hs)?;
                if i < n_in {
                    match (&mut train, &mut val) {
                        (Some(t), Some(v)) => {
                            t.extend(&tr);
                            v.extend(&va);
                        }
                        _ => {
                            train = Some(tr);
                            val = Some(va);
                        }
                    }
                }
                tests.push(te);
            }
            Ok((JobData { train: train.expect("in-sample tickers"), val: val.expect("in-sample tickers") }, tests))
        };
        let sizes = data.iter().map(|d| d.test.n).collect();
        outcomes.push((spec.index, Ok(run_window(cfg, &entries, "universal", spec.index, &build, data.len(), sizes))));
    }

    let mut cells = Vec::new();
    for (t, ticker) in tickers.iter().enumerate() {
        let refs: Vec<_> = outcomes.iter().map(|(w, o)| (*w, o.as_ref().map(|o| (o, t)).map_err(Clone::clone))).collect();
        cells.extend(assemble(cfg, &entries, ticker, Some(t < n_in), &refs)?);
    }
    Ok(ExperimentResult {
        kind: RunKind::Universal,
        models: entries.iter().map(|e| e.label.clone()).collect(),
        tickers,
        horizons: cfg.horizons.clone(),
        alphas: cfg.mcs.alphas.clone(),
        windows,
        cells,
        audit,
    })
}

/// One model trained on one ticker's window, with its test-week losses.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub label: String,
    pub ticker: String,
    pub window: usize,
    pub horizons: Vec<usize>,
    pub checkpoint: Checkpoint,
    pub test_samples: usize,
    pub test_losses: Vec<f64>,
}

/// Metadata written next to a checkpoint so it can be evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label: String,
    pub ticker: String,
    pub window: usize,
    pub horizons: Vec<usize>,
}

impl SingleRun {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta { label: self.label.clone(), ticker: self.ticker.clone(), window: self.window, horizons: self.horizons.clone() }
    }
}

fn horizon_indices(cfg: &ExperimentConfig, horizons: &[usize]) -> Result<Vec<usize>> {
    horizons
        .iter()
        .map(|h| {
            cfg.horizons
                .iter()
                .position(|x| x == h)
                .ok_or_else(|| HarnessError::Invalid(format!("horizon {h} is not configured")))
        })
        .collect()
}

fn single_window(cfg: &ExperimentConfig, ticker: &str, window: usize, kind: Option<InputKind>) -> Result<WindowData> {
    let (_, calendar, windows) = setup(cfg)?;
    let spec = windows
        .get(window)
        .ok_or_else(|| HarnessError::Invalid(format!("window {window} of {}", windows.len())))?;
    let mut store = TickerStore::new(cfg, &calendar, ticker, 0, kind.into_iter().collect())?;
    store.window_data(spec)
}

/// Trains `choice` on `ticker`'s window `window`. A single-horizon model
/// uses `horizon` (default: the first configured); seq2seq uses them all.
pub fn train_single(
    cfg: &ExperimentConfig,
    ticker: &str,
    window: usize,
    choice: ModelChoice,
    head: Head,
    horizon: Option<usize>,
) -> Result<SingleRun> {
    let spec = cfg.model_spec(choice, head)?;
    let horizons = match head {
        Head::Seq2Seq => cfg.horizons.clone(),
        Head::Single => vec![horizon.unwrap_or(cfg.horizons[0])],
    };
    let hs = horizon_indices(cfg, &horizons)?;
    let entry = Entry { label: spec.label(), kind: InputKind::of(&spec), spec };
    let wd = single_window(cfg, ticker, window, entry.kind)?;
    let (train, val, test) = datasets(cfg, &wd, &entry, &hs)?;
    let seed = mix_seed(cfg.seed, &["train", ticker, &window.to_string(), &entry.label, &horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("+")]);
    let outcome = train_model::<f32>(&entry.spec, &train, &val, &cfg.train.to_train_config(seed))?;
    let test_losses = test_losses(&entry.spec, &outcome.params, &test)?;
    Ok(SingleRun {
        label: entry.label,
        ticker: ticker.to_string(),
        window,
        horizons,
        checkpoint: Checkpoint::new(entry.spec, seed, outcome.best_epoch, &outcome.params),
        test_samples: test.len(),
        test_losses,
    })
}

/// Per-horizon test-week losses of a saved model on `ticker`'s window.
pub fn evaluate_single(cfg: &ExperimentConfig, ticker: &str, window: usize, checkpoint: &Checkpoint, horizons: &[usize]) -> Result<Vec<f64>> {
    let spec = &checkpoint.header.spec;
    if horizons.len() != spec.horizons() {
        return Err(HarnessError::Invalid(format!("model has {} heads, {} horizons given", spec.horizons(), horizons.len())));
    }
    let hs = horizon_indices(cfg, horizons)?;
    let kind = InputKind::of(spec);
    let wd = single_window(cfg, ticker, window, kind)?;
    let test = wd.dataset(&wd.test, kind, &hs, cfg)?;
    test_losses(spec, &checkpoint.params, &test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{McsSettings, RepresentationConfig, TrainSettings, Widths};
    use crate::data::sample_shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            horizons: vec![10],
            models: vec!["benchmark".parse().unwrap(), "deeplob:L1".parse().unwrap()],
            representation: RepresentationConfig { t: 5, levels: 2, window: 3, depth: 2, tick: 100, smoothing: 2 },
            widths: Widths { channels: 2, inception: 2, hidden: 4 },
            train: TrainSettings { max_epochs: 1, batch_size: 16, ..TrainSettings::default() },
            mcs: McsSettings { replications: 200, ..McsSettings::default() },
            ..ExperimentConfig::default()
        }
    }

    fn noise(cfg: &ExperimentConfig, e: &Entry, n: usize, seed: u64) -> Dataset {
        let shape = e.kind.map_or(vec![1], |k| sample_shape(k, cfg));
        let mut ds = Dataset::new(shape, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = ds.sample_len();
        for _ in 0..n {
            let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            ds.push(&x, &[rng.random_range(0..3u8)]);
        }
        ds
    }

    #[test]
    fn failed_job_drops_its_window_for_every_model() {
        let cfg = config();
        let entries = lineup(&cfg).unwrap();
        let outcomes: Vec<(usize, std::result::Result<WindowOutcome, String>)> = (0..4)
            .map(|w| {
                let build = |e: &Entry, _: &[usize]| -> Result<(JobData, Vec<Dataset>)> {
                    if w == 1 && e.kind.is_some() {
                        return Err(HarnessError::Invalid("no samples".into()));
                    }
                    let data = JobData { train: noise(&cfg, e, 40, 1), val: noise(&cfg, e, 10, 2) };
                    Ok((data, vec![noise(&cfg, e, 30, 3 + w as u64)]))
                };
                (w, Ok(run_window(&cfg, &entries, "T", w, &build, 1, vec![30])))
            })
            .collect();
        let refs: Vec<_> = outcomes.iter().map(|(w, o)| (*w, o.as_ref().map(|o| (o, 0)).map_err(Clone::clone))).collect();
        let cells = assemble(&cfg, &entries, "T", None, &refs).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.windows, vec![0, 2, 3]);
        assert_eq!(c.panel.n_windows(), 3);
        assert!(c.mcs.is_some());
        assert!(c.notes.iter().any(|n| n == "window 1 dropped for every model: deepLOB(L1) failed"), "{:?}", c.notes);
        assert!(c.notes.iter().any(|n| n.starts_with("window 1: deepLOB(L1) (h=10): ")), "{:?}", c.notes);
    }

    #[test]
    fn too_few_windows_skip_the_mcs() {
        let cfg = config();
        let entries = lineup(&cfg).unwrap();
        let outcomes = vec![(0, Err("no sessions".to_string()))];
        let cells = assemble(&cfg, &entries, "T", None, &outcomes).unwrap();
        assert!(cells[0].mcs.is_none());
        assert_eq!(cells[0].notes, vec!["window 0 dropped: no sessions", "MCS not run: 0 usable windows"]);
    }

    #[test]
    fn seq2seq_variants_follow_the_single_models() {
        let mut cfg = config();
        cfg.horizons = vec![10, 20];
        cfg.seq2seq = true;
        let labels: Vec<String> = lineup(&cfg).unwrap().into_iter().map(|e| e.label).collect();
        assert_eq!(labels, vec!["benchmark", "deepLOB(L1)", "deepLOB(L1, seq2seq)"]);
        let entries = lineup(&cfg).unwrap();
        assert_eq!(jobs(&entries, 2), vec![(0, vec![0]), (0, vec![1]), (1, vec![0]), (1, vec![1]), (2, vec![0, 1])]);
    }
}
