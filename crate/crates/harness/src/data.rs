//! Session discovery, per-day feature extraction and window datasets.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use lobscope_core::book::TickGrid;
use lobscope_core::features::{FrameConfig, Moments, Representation, RollingStats, SessionFrames};
use lobscope_core::ingest::{clean_session, halt_exclusions, parse_session, SessionTimes, Timestamp};
use lobscope_core::labels::{alpha_hat, compute_return, ClassThreshold, ReturnSpec};
use lobscope_nn::{Dataset, Level, ModelSpec};
use log::debug;

use crate::calendar::{Calendar, WindowSpec};
use crate::config::ExperimentConfig;
use crate::{HarnessError, Result};

/// One LOBSTER message/orderbook pair on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionFile {
    pub ticker: String,
    pub date: String,
    pub open_ms: u64,
    pub close_ms: u64,
    pub message: PathBuf,
    pub orderbook: PathBuf,
}

impl SessionFile {
    pub fn times(&self, edge_trim_secs: u64) -> SessionTimes {
        let mut s = SessionTimes::new(
            self.ticker.clone(),
            self.date.clone(),
            Timestamp(self.open_ms * 1_000_000),
            Timestamp(self.close_ms * 1_000_000),
        );
        s.edge_trim_ns = edge_trim_secs * 1_000_000_000;
        s
    }
}

/// Parses `TICKER_DATE_OPEN_CLOSE_message_L.csv` into (date, open, close).
fn parse_message_name(name: &str, ticker: &str, levels: usize) -> Option<(String, u64, u64)> {
    let stem = name.strip_suffix(&format!("_message_{levels}.csv"))?;
    let rest = stem.strip_prefix(ticker)?.strip_prefix('_')?;
    let mut parts = rest.rsplitn(3, '_');
    let close = parts.next()?.parse().ok()?;
    let open = parts.next()?.parse().ok()?;
    let date = parts.next()?.to_string();
    Some((date, open, close))
}

/// The session whose message file is `message`, named in the LOBSTER
/// convention with the orderbook file alongside.
pub fn session_from_path(message: &Path, levels: usize) -> Result<SessionFile> {
    let name = message
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| HarnessError::Invalid(format!("{} is not a file", message.display())))?;
    let ticker = name.split('_').next().unwrap_or_default().to_string();
    let (date, open_ms, close_ms) = parse_message_name(&name, &ticker, levels).ok_or_else(|| {
        HarnessError::Invalid(format!("{name} is not named TICKER_DATE_OPEN_CLOSE_message_{levels}.csv"))
    })?;
    let book = name.replace(&format!("_message_{levels}.csv"), &format!("_orderbook_{levels}.csv"));
    let orderbook = message.with_file_name(book);
    Ok(SessionFile { ticker, date, open_ms, close_ms, message: message.to_path_buf(), orderbook })
}

/// Sessions of `ticker` under `root/<ticker>/`, sorted by date.
pub fn discover_sessions(root: &Path, ticker: &str, levels: usize) -> Result<Vec<SessionFile>> {
    let dir = root.join(ticker);
    let entries = fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((date, open_ms, close_ms)) = parse_message_name(&name, ticker, levels) else { continue };
        let book = name.replace(&format!("_message_{levels}.csv"), &format!("_orderbook_{levels}.csv"));
        let orderbook = dir.join(book);
        if !orderbook.exists() {
            return Err(HarnessError::Invalid(format!("{name} has no orderbook file")));
        }
        out.push(SessionFile { ticker: ticker.to_string(), date, open_ms, close_ms, message: entry.path(), orderbook });
    }
    out.sort_by(|a, b| a.date.cmp(&b.date));
    if let Some(w) = out.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(HarnessError::Invalid(format!("{ticker} has two sessions dated {}", w[0].date)));
    }
    Ok(out)
}

/// Dates present for every ticker, or the configured dates.
pub fn experiment_calendar(cfg: &ExperimentConfig) -> Result<Calendar> {
    if let Some(dates) = &cfg.dates {
        return Ok(Calendar::new(dates.iter().cloned()));
    }
    let root = cfg.data_root()?;
    let mut common: Option<Vec<String>> = None;
    for t in cfg.all_tickers() {
        let dates: Vec<String> = discover_sessions(&root, &t, cfg.representation.levels)?.into_iter().map(|s| s.date).collect();
        common = Some(match common {
            None => dates,
            Some(c) => c.into_iter().filter(|d| dates.contains(d)).collect(),
        });
    }
    Ok(Calendar::new(common.unwrap_or_default()))
}

/// Frames and standardisation moments of one cleaned session.
#[derive(Debug, Clone)]
pub struct DayData {
    pub date: String,
    pub frames: SessionFrames,
    pub raw: Moments,
    pub flow: Moments,
}

pub fn frame_config(cfg: &ExperimentConfig) -> Result<FrameConfig> {
    let r = &cfg.representation;
    Ok(FrameConfig {
        levels: r.levels,
        window: r.window,
        depth: if cfg.needs_queue_slots() { r.depth } else { 0 },
        grid: TickGrid::new(r.tick)?,
    })
}

pub fn load_day(file: &SessionFile, cfg: &ExperimentConfig) -> Result<DayData> {
    let levels = cfg.representation.levels;
    let (messages, snapshots) = parse_session(&file.message, &file.orderbook, levels)?;
    let times = file.times(cfg.session.edge_trim_secs);
    let exclusions = halt_exclusions(&messages, &times);
    let clean = clean_session(&messages, &snapshots, &times, &exclusions)?;
    let frames = SessionFrames::extract(&messages, &snapshots, &clean, frame_config(cfg)?)?;
    debug!("{} {}: {} rows, {} retained", file.ticker, file.date, messages.len(), frames.len());
    let raw = frames.raw_moments();
    let flow = frames.order_flow_moments();
    Ok(DayData { date: file.date.clone(), frames, raw, flow })
}

/// First and one-past-last anchor at which every representation and every
/// horizon is defined. Anchors start at `T` so that order flow windows exist.
pub fn labelable_range(len: usize, t: usize, specs: &[ReturnSpec]) -> Option<(usize, usize)> {
    let before = specs.iter().map(|s| s.stencil().0).max().unwrap_or(0);
    let after = specs.iter().map(|s| s.stencil().1).max().unwrap_or(0);
    let start = t.max(before);
    let end = len.checked_sub(after)?;
    (start < end).then_some((start, end))
}

/// Stride-`factor` anchors from the first labelable event.
pub fn subsample_anchors(range: Option<(usize, usize)>, factor: usize) -> Vec<usize> {
    match range {
        Some((start, end)) => (start..end).step_by(factor.max(1)).collect(),
        None => Vec::new(),
    }
}

/// The input a model reads: a representation, optionally cut to the first level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputKind {
    pub representation: Representation,
    pub l1: bool,
}

impl InputKind {
    pub fn of(spec: &ModelSpec) -> Option<InputKind> {
        let choice = crate::config::ModelChoice::new(spec.family, spec.level);
        choice.representation().map(|representation| InputKind { representation, l1: spec.level == Level::L1 })
    }

    fn needs_stats(self) -> bool {
        matches!(self.representation, Representation::RawLob | Representation::OrderFlow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Origin {
    /// Index into the run's ticker list.
    pub ticker: u32,
    /// Calendar position of the session.
    pub day: u32,
    pub anchor: u32,
}

/// Samples of one part of a window: inputs per kind, returns per horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub n: usize,
    pub horizons: usize,
    pub inputs: Vec<(InputKind, Vec<f32>)>,
    /// Row-major `n × horizons`.
    pub returns: Vec<f64>,
    pub origin: Vec<Origin>,
}

impl Split {
    fn new(kinds: &[InputKind], horizons: usize) -> Self {
        Split { horizons, inputs: kinds.iter().map(|&k| (k, Vec::new())).collect(), ..Default::default() }
    }

    pub fn input(&self, kind: InputKind) -> Option<&[f32]> {
        self.inputs.iter().find(|(k, _)| *k == kind).map(|(_, v)| v.as_slice())
    }

    pub fn returns_at(&self, h: usize) -> Vec<f64> {
        self.returns.iter().skip(h).step_by(self.horizons).copied().collect()
    }
}

/// Train / validation / test samples of one ticker in one window, with the
/// class thresholds fitted on the training returns.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    pub ticker: String,
    pub window: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub thresholds: Vec<ClassThreshold>,
}

impl WindowData {
    /// Dataset with labels for the listed horizon indices. `kind = None`
    /// gives the benchmark's one-element dummy input.
    pub fn dataset(&self, split: &Split, kind: Option<InputKind>, horizons: &[usize], cfg: &ExperimentConfig) -> Result<Dataset> {
        let shape = match kind {
            None => vec![1],
            Some(k) => sample_shape(k, cfg),
        };
        let mut ds = Dataset::new(shape, horizons.len());
        ds.y.reserve(split.n * horizons.len());
        for i in 0..split.n {
            for &h in horizons {
                ds.y.push(self.thresholds[h].classify(split.returns[i * split.horizons + h]).index() as u8);
            }
        }
        ds.x = match kind {
            None => vec![0.0; split.n],
            Some(k) => split
                .input(k)
                .ok_or_else(|| HarnessError::Invalid(format!("window data lacks {:?}", k)))?
                .to_vec(),
        };
        Ok(ds)
    }
}

pub fn sample_shape(kind: InputKind, cfg: &ExperimentConfig) -> Vec<usize> {
    let r = &cfg.representation;
    let levels = if kind.l1 { 1 } else { r.levels };
    match kind.representation {
        Representation::RawLob => vec![r.t, 4 * levels],
        Representation::OrderFlow => vec![r.t, 2 * levels],
        Representation::Volume => vec![r.t, r.window, 2],
        Representation::VolumeL3 => vec![r.t, r.window, 2, r.depth],
    }
}

/// Loads sessions of one ticker on demand and caches their moments so that
/// later windows can standardise with the preceding days.
pub struct TickerStore<'a> {
    cfg: &'a ExperimentConfig,
    pub ticker: String,
    ticker_index: u32,
    calendar: &'a Calendar,
    files: HashMap<String, SessionFile>,
    moments: HashMap<String, (Moments, Moments)>,
    kinds: Vec<InputKind>,
}

impl<'a> TickerStore<'a> {
    pub fn new(cfg: &'a ExperimentConfig, calendar: &'a Calendar, ticker: &str, ticker_index: u32, kinds: Vec<InputKind>) -> Result<Self> {
        let root = cfg.data_root()?;
        let files = discover_sessions(&root, ticker, cfg.representation.levels)?
            .into_iter()
            .map(|f| (f.date.clone(), f))
            .collect();
        Ok(TickerStore { cfg, ticker: ticker.to_string(), ticker_index, calendar, files, moments: HashMap::new(), kinds })
    }

    fn file(&self, date: &str) -> Result<&SessionFile> {
        self.files
            .get(date)
            .ok_or_else(|| HarnessError::Invalid(format!("{} has no session on {date}", self.ticker)))
    }

    fn load(&mut self, date: &str) -> Result<DayData> {
        let day = load_day(self.file(date)?, self.cfg)?;
        self.moments.insert(date.to_string(), (day.raw.clone(), day.flow.clone()));
        Ok(day)
    }

    fn needs_stats(&self) -> bool {
        self.kinds.iter().any(|k| k.needs_stats())
    }

    /// Raw and order flow statistics from the trading days before `pos`.
    fn stats_before(&mut self, pos: usize) -> Result<Option<(RollingStats, RollingStats)>> {
        if !self.needs_stats() {
            return Ok(None);
        }
        if pos < RollingStats::DAYS {
            return Err(HarnessError::Invalid(format!(
                "{}: day {} has fewer than {} prior sessions for standardisation",
                self.ticker,
                self.calendar.days[pos],
                RollingStats::DAYS
            )));
        }
        let mut raw = Vec::new();
        let mut flow = Vec::new();
        for p in pos - RollingStats::DAYS..pos {
            let date = self.calendar.days[p].clone();
            if !self.moments.contains_key(&date) {
                self.load(&date)?;
            }
            let (r, f) = &self.moments[&date];
            raw.push(r.clone());
            flow.push(f.clone());
        }
        Ok(Some((RollingStats::from_days(&raw)?, RollingStats::from_days(&flow)?)))
    }

    fn position(&self, date: &str) -> Result<usize> {
        self.calendar
            .position(date)
            .ok_or_else(|| HarnessError::Invalid(format!("{date} is not in the calendar")))
    }

    /// Builds the window's samples. Training and validation days are
    /// subsampled and standardised with their own five preceding days (days
    /// without five predecessors are skipped); the
    /// test week is used in full, standardised with the five days before it.
    pub fn window_data(&mut self, spec: &WindowSpec) -> Result<WindowData> {
        let specs = self.cfg.return_specs();
        let h = specs.len();
        let mut train = Split::new(&self.kinds, h);
        let mut val = Split::new(&self.kinds, h);
        let mut test = Split::new(&self.kinds, h);
        for date in spec.train_val_days() {
            let pos = self.position(&date)?;
            if self.needs_stats() && pos < RollingStats::DAYS {
                log::debug!("{}: skipping {date}, too early for standardisation", self.ticker);
                continue;
            }
            let stats = self.stats_before(pos)?;
            let day = self.load(&date)?;
            let target = if spec.val_days.contains(&date) { &mut val } else { &mut train };
            self.append(target, &day, pos, stats.as_ref(), self.cfg.subsample, &specs)?;
        }
        let first_test = self.position(&spec.test_days[0])?;
        let test_stats = self.stats_before(first_test)?;
        for date in &spec.test_days {
            let pos = self.position(date)?;
            let day = self.load(date)?;
            self.append(&mut test, &day, pos, test_stats.as_ref(), 1, &specs)?;
        }
        if train.n == 0 || test.n == 0 {
            return Err(HarnessError::Invalid(format!(
                "{} window {}: {} training and {} test samples",
                self.ticker, spec.index, train.n, test.n
            )));
        }
        let thresholds = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(alpha_hat(&train.returns_at(i), s.horizon)?.with_context(self.ticker.clone(), spec.index)))
            .collect::<Result<Vec<_>>>()?;
        Ok(WindowData { ticker: self.ticker.clone(), window: spec.index, train, val, test, thresholds })
    }

    fn append(
        &self,
        split: &mut Split,
        day: &DayData,
        pos: usize,
        stats: Option<&(RollingStats, RollingStats)>,
        stride: usize,
        specs: &[ReturnSpec],
    ) -> Result<()> {
        let t = self.cfg.representation.t;
        let mids = day.frames.mids();
        let anchors = subsample_anchors(labelable_range(day.frames.len(), t, specs), stride);
        for &a in &anchors {
            for s in specs {
                split.returns.push(compute_return(&mids, s, a).expect("anchor inside labelable range"));
            }
            split.origin.push(Origin { ticker: self.ticker_index, day: pos as u32, anchor: a as u32 });
        }
        split.n += anchors.len();
        for (kind, out) in &mut split.inputs {
            let rs = match kind.representation {
                Representation::RawLob => stats.map(|s| &s.0),
                Representation::OrderFlow => stats.map(|s| &s.1),
                _ => None,
            };
            let keep = match (kind.l1, kind.representation) {
                (true, Representation::RawLob) => Some((4, 4 * self.cfg.representation.levels)),
                (true, Representation::OrderFlow) => Some((2, 2 * self.cfg.representation.levels)),
                _ => None,
            };
            for &a in &anchors {
                let w = day.frames.window(kind.representation, a, t, rs)?;
                match keep {
                    None => out.extend_from_slice(&w.data),
                    Some((cols, width)) => {
                        for row in w.data.chunks_exact(width) {
                            out.extend_from_slice(&row[..cols]);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
