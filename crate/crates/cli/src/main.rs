//! `causefs` command-line tool: fit a ranking, evaluate it, generate
//! synthetic data and sweep hyperparameter grids.

mod commands;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use causefs::dataset::Format;
use causefs::eval::NmiNorm;
use causefs::solver::Variant;

#[derive(Parser, Debug)]
#[command(name = "causefs", version, about = "Causally-aware unsupervised feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and write the feature ranking.
    Fit(FitArgs),
    /// Cluster on the top-ranked features and report ACC/NMI.
    Eval(EvalArgs),
    /// Generate a labeled synthetic dataset with known causal features.
    Synth(SynthArgs),
    /// Run fit + eval over a grid of hyperparameters.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset file (samples in rows).
    #[arg(long)]
    pub data: PathBuf,
    /// File format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Skip per-feature standardization.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e7)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Neighbors per graph column.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Embedding dimension; defaults to the number of classes when the data
    /// is labeled.
    #[arg(long)]
    pub h: Option<usize>,
    /// Number of selected features.
    #[arg(long, default_value_t = 20)]
    pub rho: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub outer_tol: f64,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    /// Keep the initial feature granularities for the whole fit.
    #[arg(long)]
    pub freeze_partition: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Overridden by the CAUSEFS_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalOptions {
    /// Selection sizes to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
    pub rho_list: Vec<usize>,
    /// k-means runs per selection size.
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Number of clusters; defaults to the number of classes.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, default_value = "geometric")]
    pub nmi: NmiArg,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum NmiArg {
    Geometric,
    Arithmetic,
}

impl From<NmiArg> for NmiNorm {
    fn from(a: NmiArg) -> Self {
        match a {
            NmiArg::Geometric => NmiNorm::Geometric,
            NmiArg::Arithmetic => NmiNorm::Arithmetic,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Ranking JSON written by `fit`.
    #[arg(long)]
    pub ranking: PathBuf,
    #[command(flatten)]
    pub options: EvalOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 10)]
    pub causal: usize,
    #[arg(long, default_value_t = 10)]
    pub spurious: usize,
    #[arg(long, default_value_t = 80)]
    pub noise: usize,
    #[arg(long, default_value_t = 2.0)]
    pub confound_strength: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e7")]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub outer_tol: f64,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    #[command(flatten)]
    pub options: EvalOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid points run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// `CAUSEFS_SEED` takes precedence over `--seed`.
pub fn effective_seed(flag: u64) -> anyhow::Result<u64> {
    match std::env::var("CAUSEFS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("CAUSEFS_SEED must be an unsigned integer, got {v:?}")),
        Err(_) => Ok(flag),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Sweep(args) => sweep::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
