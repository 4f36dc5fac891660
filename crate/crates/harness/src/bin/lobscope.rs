use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use lobscope_core::book::replay_session;
use lobscope_core::container::{Container, TensorData};
use lobscope_core::features::{RollingStats, SessionFrames};
use lobscope_core::ingest::{clean_session, halt_exclusions, parse_session};
use lobscope_harness::data::{load_day, session_from_path};
use lobscope_harness::experiment::{evaluate_single, train_single, CheckpointMeta};
use lobscope_harness::synth::business_days;
use lobscope_harness::{
    emit_report, run_experiment, run_universal, select_universe, synth_universe, Characteristics, ExperimentConfig,
    ExperimentResult, HarnessError, ModelChoice, ReportFormat, Result, SynthSpec, DATA_ENV,
};
use lobscope_mcs::{mcs_run, BootstrapConfig, LossPanel};
use lobscope_nn::checkpoint::Checkpoint;
use lobscope_nn::Head;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lobscope", version, about = "Limit order book predictability toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic universe of LOBSTER-format sessions.
    Synth(SynthArgs),
    /// Parse, reconcile and clean one session; prints a JSON summary.
    Ingest(IngestArgs),
    /// Extract one representation's feature windows from a session.
    Features(FeaturesArgs),
    /// Train one model on one ticker's rolling window.
    Train(TrainArgs),
    /// Score a saved model on a window's test week.
    Evaluate(EvaluateArgs),
    /// Run the model confidence set on a loss panel CSV.
    Mcs(McsArgs),
    /// Render report grids from a results file.
    Report(ReportArgs),
    /// Run a full experiment from a config file and write its report.
    Run(RunArgs),
    /// Pick tickers at evenly spaced liquidity quantiles.
    Select(SelectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output root; sessions go to <out>/<TICKER>/.
    #[arg(long, env = DATA_ENV)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    tickers: Vec<String>,
    /// Imbalance feedback per ticker (one value applies to all).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    coefs: Vec<f64>,
    /// Number of business days.
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value = "2019-01-07")]
    start: NaiveDate,
    /// TOML file with generator settings (SynthSpec fields).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Mean events per second, overriding `--spec`.
    #[arg(long)]
    event_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// LOBSTER message file; the orderbook file is found alongside.
    message: PathBuf,
    #[arg(long, default_value_t = 10)]
    levels: usize,
    #[arg(long, default_value_t = 600)]
    edge_trim_secs: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    message: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// raw-lob, order-flow, volume or volume-l3.
    #[arg(long)]
    representation: String,
    /// Message files of the five prior sessions, for standardisation. When
    /// absent the session is standardised with its own moments.
    #[arg(long, value_delimiter = ',')]
    prior: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ticker: String,
    #[arg(long)]
    window: usize,
    /// family[:level], e.g. deepvol:L2.
    #[arg(long)]
    model: ModelChoice,
    #[arg(long)]
    seq2seq: bool,
    #[arg(long)]
    horizon: Option<usize>,
    /// Checkpoint path; metadata is written to <out>.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the ticker the model was trained on.
    #[arg(long)]
    ticker: Option<String>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct McsArgs {
    /// CSV with columns window,n,<model>...
    panel: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.01")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    replications: usize,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<ReportFormat>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<ReportFormat>,
}

#[derive(Args)]
struct SelectArgs {
    /// CSV with columns ticker,updates,trades,price_changes,spread.
    table: PathBuf,
    #[arg(long)]
    n: usize,
}

/// Writes a line to stdout; a closed pipe ends the process quietly.
fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    if writeln!(std::io::stdout().lock(), "{args}").is_err() {
        std::process::exit(0);
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*)) };
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut base = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HarnessError::Io { path: p.clone(), source: e })?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| HarnessError::Config(e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(r) = a.event_rate {
        base.event_rate = r;
    }
    if let Some(s) = a.seed {
        base.seed = s;
    }
    let coefs = match a.coefs.len() {
        1 => vec![a.coefs[0]; a.tickers.len()],
        _ => a.coefs,
    };
    let days = business_days(a.start, a.days);
    synth_universe(&a.out, &a.tickers, &coefs, &days, &base)?;
    out!("wrote {} sessions under {}", a.tickers.len() * days.len(), a.out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let file = session_from_path(&a.message, a.levels)?;
    let (messages, snapshots) = parse_session(&file.message, &file.orderbook, a.levels)?;
    let start = std::time::Instant::now();
    let replay = replay_session(&messages, &snapshots, a.levels, true, |_, _| {})?;
    let secs = start.elapsed().as_secs_f64();
    let times = file.times(a.edge_trim_secs);
    let exclusions = halt_exclusions(&messages, &times);
    let clean = clean_session(&messages, &snapshots, &times, &exclusions)?;
    let summary = json!({
        "ticker": file.ticker,
        "date": file.date,
        "events": replay.events,
        "mismatched_events": replay.mismatches,
        "first_mismatch": replay.first_mismatch.and_then(|r| r.event),
        "crosses": replay.flags.crosses,
        "halts": replay.flags.halts,
        "events_per_sec": replay.events as f64 / secs.max(1e-9),
        "halt_exclusions": exclusions.len(),
        "collapsed_rows": clean.stats.collapsed_rows,
        "crossed_or_one_sided": clean.stats.crossed_or_one_sided,
        "outside_hours": clean.stats.outside_hours,
        "excluded": clean.stats.excluded,
        "retained": clean.len(),
        "warnings": clean.warnings.len(),
    });
    out!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let representation = a.representation.parse()?;
    let r = &cfg.representation;
    let file = session_from_path(&a.message, r.levels)?;
    let day = load_day(&file, &cfg)?;
    let flow = representation == lobscope_core::features::Representation::OrderFlow;
    let stats = if a.prior.is_empty() {
        RollingStats::from_moments(if flow { &day.flow } else { &day.raw })?
    } else {
        let mut moments = Vec::new();
        for p in &a.prior {
            let d = load_day(&session_from_path(p, r.levels)?, &cfg)?;
            moments.push(if flow { d.flow } else { d.raw });
        }
        RollingStats::from_days(&moments)?
    };
    let frames: &SessionFrames = &day.frames;
    let first = SessionFrames::first_anchor(representation, r.t);
    let anchors: Vec<usize> = (first..frames.len()).step_by(a.stride.max(1)).collect();
    let mut data = Vec::new();
    let mut shape = Vec::new();
    for &t in &anchors {
        let w = frames.window(representation, t, r.t, Some(&stats))?;
        shape = w.shape.clone();
        data.extend_from_slice(&w.data);
    }
    let mut c = Container::new();
    c.set_attr("ticker", &file.ticker);
    c.set_attr("date", &file.date);
    c.set_attr("representation", representation);
    c.set_attr("standardised_with", if a.prior.is_empty() { "session" } else { "prior sessions" });
    let mut dims = vec![anchors.len()];
    dims.extend(shape);
    c.insert("x", dims, TensorData::F32(data))?;
    c.insert("anchor", vec![anchors.len()], TensorData::I64(anchors.iter().map(|&t| t as i64).collect()))?;
    c.insert("mid", vec![frames.len()], TensorData::F64(frames.mids()))?;
    c.write(&a.out)?;
    out!("wrote {} windows to {}", anchors.len(), a.out.display());
    Ok(())
}

fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let head = if a.seq2seq { Head::Seq2Seq } else { Head::Single };
    let run = train_single(&cfg, &a.ticker, a.window, a.model, head, a.horizon)?;
    run.checkpoint.write(&a.out)?;
    let meta = meta_path(&a.out);
    fs::write(&meta, serde_json::to_string_pretty(&run.meta())?).map_err(|e| HarnessError::Io { path: meta, source: e })?;
    let out = json!({
        "model": run.label,
        "ticker": run.ticker,
        "window": run.window,
        "horizons": run.horizons,
        "best_epoch": run.checkpoint.header.epoch,
        "test_samples": run.test_samples,
        "test_losses": run.test_losses,
    });
    out!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let checkpoint = Checkpoint::read(&a.checkpoint)?;
    let path = meta_path(&a.checkpoint);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let ticker = a.ticker.unwrap_or(meta.ticker);
    let window = a.window.unwrap_or(meta.window);
    let losses = evaluate_single(&cfg, &ticker, window, &checkpoint, &meta.horizons)?;
    let out = json!({ "model": meta.label, "ticker": ticker, "window": window, "horizons": meta.horizons, "test_losses": losses });
    out!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn mcs(a: McsArgs) -> Result<()> {
    let panel = LossPanel::read_csv(&a.panel)?;
    let result = mcs_run(&panel, &a.alphas, &BootstrapConfig { replications: a.replications, block: a.block, seed: a.seed })?;
    fs::create_dir_all(&a.out).map_err(|e| HarnessError::Io { path: a.out.clone(), source: e })?;
    result.write_json(&a.out.join("mcs.json"))?;
    result.write_csv(&a.out.join("mcs.csv"))?;
    for (name, p) in result.models.iter().zip(&result.p_values) {
        out!("{name}\t{p}");
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let result = ExperimentResult::read_json(&a.results)?;
    for p in emit_report(&result, &a.out, &a.format)? {
        out!("{}", p.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let result = if cfg.universal.is_some() { run_universal(&cfg)? } else { run_experiment(&cfg)? };
    for p in emit_report(&result, &a.out, &a.format)? {
        out!("{}", p.display());
    }
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let table = Characteristics::read_csv(&a.table)?;
    for t in select_universe(&table, a.n)? {
        out!("{t}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Mcs(a) => mcs(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
        Command::Select(a) => select(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
