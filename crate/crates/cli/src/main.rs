//! `pnp`: generate datasets, train, evaluate and benchmark clustering.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence.

mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pnp", version, about = "Generalized category discovery with potential prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset and its manifest.
    Gen(GenArgs),
    /// Train a model; writes config echo, metrics, checkpoints and a report into the run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a predictions file against the hidden labels.
    Eval(EvalArgs),
    /// Time clustering of the full set against the unlabelled rows only.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Total number of classes.
    #[arg(long)]
    pub classes: usize,
    /// Number of old (labelled) classes.
    #[arg(long)]
    pub old: usize,
    /// Points per class.
    #[arg(long)]
    pub per_class: usize,
    /// Feature dimension.
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Radius of the sphere the class means lie on.
    #[arg(long, default_value_t = 6.0)]
    pub sep: f64,
    /// RMS length of the per-point noise vector.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Fraction of each old class that is labelled.
    #[arg(long, default_value_t = 0.5)]
    pub labelled_fraction: f64,
    /// Dataset path; the manifest is written next to it as `<out>.manifest.json`.
    #[arg(long, default_value = "data.gcd")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Train without potential prototypes.
    NoPp,
    /// Keep the potential prototype pool at its initial values.
    FrozenPp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat key=value config file, applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub ablate: Option<Ablation>,
    /// Extra config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset file holding the hidden labels of the unlabelled rows.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint whose student encoder clusters the unlabelled rows.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// One predicted cluster id per unlabelled row, in dataset order.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Config file; defaults to `config.txt` beside the checkpoint or in its parent directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Report K^e against the neighbour count, e.g. `k=5,10,20,40`.
    #[arg(long, value_name = "k=LIST")]
    pub sweep: Option<String>,
    /// Directory for `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Clustering runs per set; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.6)]
    pub tau_f: f64,
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster encoder features of this checkpoint instead of raw features.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
