//! `caribou`: dataset generation, noise calibration, training and audits for
//! private contractive graph message passing.
//!
//! Every command prints machine-readable output on stdout. Failures print a
//! single-line JSON object `{"error": ..., "stage": ...}` on stderr and exit
//! with status 1.

mod commands;
mod config;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use caribou_core::accountant::AccountingMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable overriding every output directory.
pub const OUT_ENV: &str = "CARIBOU_OUT";

#[derive(Debug)]
pub struct CliError {
    stage: &'static str,
    message: String,
}

impl CliError {
    pub fn new(stage: &'static str, message: impl Display) -> Self {
        CliError {
            stage,
            message: message.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "caribou", version, about = "Private multi-hop graph message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a chain dataset (edges.txt, features.csv, labels.csv, split.csv).
    GenChain(GenChainArgs),
    /// Calibrate the per-hop noise scale and print the noise plan.
    Calibrate(CalibrateArgs),
    /// Noise scale under linear and convergent accounting for several depths.
    NoiseTable(NoiseTableArgs),
    /// Run message passing and head training from a JSON config.
    Train(RunArgs),
    /// Play the membership-inference game described by a JSON config.
    Audit(RunArgs),
    /// Train over a grid of privacy budgets and replicas in parallel.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenChainArgs {
    /// chain-s, chain-m, chain-l or chain-x.
    #[arg(long, conflicts_with_all = ["chains", "len", "classes", "dim"])]
    preset: Option<String>,
    #[arg(long, requires_all = ["len", "classes", "dim"])]
    chains: Option<usize>,
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory (default: $CARIBOU_OUT or the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Convergent,
    Linear,
}

impl From<ModeArg> for AccountingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Convergent => AccountingMode::Convergent,
            ModeArg::Linear => AccountingMode::Linear,
        }
    }
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    gamma: f64,
    /// Per-layer sensitivity.
    #[arg(long = "delta-mp", default_value_t = 1.0)]
    delta_mp: f64,
    /// Pin the RDP order instead of searching the default grid.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Convergent)]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct NoiseTableArgs {
    #[arg(long, default_value_t = 4.0)]
    eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long, default_value_t = 6.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 4, 8, 16, 32, 64, 128])]
    k: Vec<u32>,
    /// Shortest round-trip floats instead of four significant digits.
    #[arg(long)]
    full_precision: bool,
    /// Also write the CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (takes precedence over $CARIBOU_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Privacy budgets to sweep (default: the config's epsilon).
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Runs per budget, each with a seed derived from the config seed.
    #[arg(long, default_value_t = 3)]
    replicas: u64,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenChain(a) => commands::gen_chain(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::NoiseTable(a) => commands::noise_table(a),
        Command::Train(a) => commands::train(a),
        Command::Audit(a) => commands::audit(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.message, "stage": e.stage });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
