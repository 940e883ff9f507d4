//! `shapecast` command-line driver.
//!
//! Every subcommand merges defaults, an optional `--config` key-value file
//! and flag overrides (in that order), writes its CSV outputs into
//! `--out-dir`, and leaves a `<command>.manifest` next to them.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapecast::Error;

#[derive(Debug, Parser)]
#[command(name = "shapecast", version, about = "Shape-preserving forecasting of functional time series")]
pub struct Cli {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Evaluation grid size for generated or ingested curves.
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    /// Lattice size used by dynamic-programming alignment.
    #[arg(long, global = true)]
    pub dp_grid: Option<usize>,
    /// Key-value config file (`key = value` per line).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving CSV outputs and the manifest.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation experiment, or emit one simulated series.
    Simulate(SimulateArgs),
    /// Decompose curves into amplitudes and warpings.
    Register(DataArgs),
    /// Forecast the curve following the input series.
    Predict(PredictArgs),
    /// Rolling-window comparison of forecasting methods.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo cross-validation of the state counts.
    Cv(CvArgs),
    /// Smooth monthly SST readings into annual curves.
    Ingest(DataArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation setup, 1 (Markov prototypes) or 2 (smooth phase drift).
    #[arg(long)]
    pub setup: Option<u8>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Diagonal of the phase transition matrix (setup 1).
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Series length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated list of `sp`, `ao`.
    #[arg(long)]
    pub methods: Option<String>,
    /// Write replicate 0's curves instead of running the experiment.
    #[arg(long)]
    pub curves_only: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Overrides of the SP model configuration.
#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Number of phase states.
    #[arg(long)]
    pub g: Option<usize>,
    /// Number of amplitude states.
    #[arg(long)]
    pub l: Option<usize>,
    /// Autoregressive order, or `auto`.
    #[arg(long)]
    pub order: Option<String>,
    /// Number of principal components, or `auto`.
    #[arg(long)]
    pub dim: Option<String>,
    /// `binary` or `weighted`.
    #[arg(long)]
    pub predictor_mode: Option<String>,
    /// `soft` or `hard`.
    #[arg(long)]
    pub warp_mode: Option<String>,
}

/// Input series plus SST ingestion options.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Curve-matrix CSV or SST text file.
    #[arg(long)]
    pub data: PathBuf,
    /// `auto` (default), `curves` or `sst`.
    #[arg(long)]
    pub format: Option<String>,
    /// SST column header to read.
    #[arg(long)]
    pub region: Option<String>,
    /// Inclusive year range, `lo-hi`.
    #[arg(long)]
    pub years: Option<String>,
    /// Comma-separated years to drop before smoothing.
    #[arg(long)]
    pub exclude: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `sp` (default) or `ao`.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Comma-separated list of `sp`, `ao`.
    #[arg(long)]
    pub methods: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated phase-state candidates.
    #[arg(long)]
    pub g_candidates: Option<String>,
    /// Comma-separated amplitude-state candidates.
    #[arg(long)]
    pub l_candidates: Option<String>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Exit code and category for each failure class.
pub fn error_category(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Io(_) => (3, "io"),
        Error::Config(_) => (4, "config"),
        Error::Parse { .. } => (5, "parse"),
        Error::Dimension(_) | Error::InvalidInput(_) | Error::InvalidWarping(_) => (6, "input"),
        Error::DegenerateSrsf(_) | Error::NonInvertible(_) | Error::Fit(_) | Error::DegenerateOracle(_) => {
            (7, "numerical")
        }
    }
}

const USAGE_EXIT: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("error category=usage");
                return ExitCode::from(USAGE_EXIT);
            }
            return ExitCode::SUCCESS;
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, cat) = error_category(&e);
            eprintln!("error category={cat} message={e}");
            ExitCode::from(code)
        }
    }
}
