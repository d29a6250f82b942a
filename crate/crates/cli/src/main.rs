//! `capstraffic` — generate synthetic traffic data, train the CNN or capsule
//! network, evaluate against the persistence baseline, predict from a
//! checkpoint, and audit parameter counts.
//!
//! Exit codes are stable for scripting: 0 success, 1 runtime or data error,
//! 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CliError;

#[derive(Parser)]
#[command(name = "capstraffic", version, about = "Traffic-speed forecasting with a CNN baseline and a capsule network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speed CSV.
    Generate(GenerateArgs),
    /// Train a model end to end and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (and the persistence baseline) on held-out data.
    Evaluate(EvaluateArgs),
    /// Predict the next speeds from a checkpoint and a data window.
    Predict(PredictArgs),
    /// Audit trainable-parameter counts against the reference totals.
    Audit(AuditArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Plain key=value configuration file. Flags override its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Number of sensors (CSV columns).
    #[arg(long)]
    sensors: Option<usize>,
    /// Number of full days at the 15-minute cadence (96 rows per day).
    #[arg(long)]
    days: Option<usize>,
    /// Generator seed; the same seed reproduces the file byte for byte.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of cells left empty, 0..1.
    #[arg(long = "missing-rate")]
    missing_rate: Option<f64>,
    /// Measurement noise in km/h.
    #[arg(long = "noise-std")]
    noise_std: Option<f64>,
    /// Day-to-day congestion modulation strength.
    #[arg(long = "day-factor-std")]
    day_factor_std: Option<f64>,
    /// Output CSV path.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Input speed CSV.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Architecture: cnn, capsnet, or capsnet-reduced.
    #[arg(long)]
    model: Option<String>,
    /// Task geometry: task1..task4 or custom "L,M,N".
    #[arg(long)]
    task: Option<String>,
    /// Starting learning rate.
    #[arg(long)]
    lr0: Option<f64>,
    /// Per-step exponential learning-rate decay.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Run seed: weight init, shuffling, everything.
    #[arg(long)]
    seed: Option<u64>,
    /// Train/eval boundary: fraction like 0.75 or an ISO timestamp.
    #[arg(long)]
    split: Option<String>,
    /// Drop days with more than this fraction of cells missing.
    #[arg(long = "day-drop-threshold")]
    day_drop_threshold: Option<f64>,
    /// Output directory for checkpoint.bin, loss.csv, manifest.txt.
    #[arg(short, long, value_name = "DIR")]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Input speed CSV.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Trained checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Evaluate only the persistence baseline; no checkpoint needed.
    #[arg(long = "baseline-only")]
    baseline_only: bool,
    /// Task geometry for --baseline-only runs (task1..task4 or "L,M,N").
    #[arg(long)]
    task: Option<String>,
    /// Train/eval boundary: fraction like 0.75 or an ISO timestamp.
    #[arg(long)]
    split: Option<String>,
    #[arg(long = "day-drop-threshold")]
    day_drop_threshold: Option<f64>,
    /// Output directory for metrics.json, comparison dumps, manifest.txt.
    #[arg(short, long, value_name = "DIR")]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Input speed CSV supplying the history window.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Timestamp of the last history row (default: the last row of the data).
    #[arg(long, value_name = "TIMESTAMP")]
    at: Option<String>,
    /// Optional CSV output for the predictions.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Emit the table as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("CAPSTRAFFIC_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("CAPSTRAFFIC_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("cannot configure the worker pool: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(args) => commands::generate::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Audit(args) => commands::audit::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::AuditMismatch) => ExitCode::from(1),
    }
}
