//! `njode`: generate datasets, train, evaluate, run convergence studies and
//! export plot tables.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use njode::error::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "njode", version, about = "Neural jump ODE experiments on simulated SDE data")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset directory.
    Generate(GenerateArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run's checkpoint and write predictions.csv.
    Eval(EvalArgs),
    /// Sweep training-set size and network width.
    Study(StudyArgs),
    /// Write plot tables: predictions of a run, or a study summary.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// bs, ou, heston, heston_nofeller, regime or sine.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Number of grid steps K.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Horizon T.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 0.1)]
    pub obs_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// full or bernoulli:<p>.
    #[arg(long, default_value = "full")]
    pub mask_mode: String,
    /// Dimension for the Heston models.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Override a model parameter, e.g. --param sigma=0.5 (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub latent: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// full or masked.
    #[arg(long, default_value = "full")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Require the evaluation metric; fails when the model has no oracle.
    #[arg(long)]
    pub metric: bool,
    /// Evaluate every path instead of the run's test split.
    #[arg(long)]
    pub all: bool,
    /// Where to write predictions (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n1: Vec<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 4000)]
    pub test_size: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory to export predictions from (needs --data).
    #[arg(long, requires = "data", required_unless_present = "study", conflicts_with = "study")]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Only the first N paths of the test split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// study.csv to summarise as mean and std per cell.
    #[arg(long)]
    pub study: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers;
    let result = njode::training::with_workers(workers, || match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a, workers),
        Command::Eval(a) => commands::eval(a),
        Command::Study(a) => commands::study(a, workers),
        Command::Export(a) => commands::export(a),
    })
    .and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
