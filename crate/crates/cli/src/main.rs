//! `bppm`: simulate, fit and evaluate block point process models.

mod commands;
mod config;
mod formats;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{parse_triple, Horizon, Method, Triple};

#[derive(Parser)]
#[command(name = "bppm", version, about = "Block point process models for timestamped relational events")]
struct Cli {
    /// JSON file with one object of settings per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a network from a block Hawkes model.
    Simulate(SimulateFlags),
    /// Estimate classes and block-pair parameters.
    Fit(FitFlags),
    /// Spectral clustering of the aggregated adjacency matrix.
    Spectral(SpectralFlags),
    /// Compare next-event predictions of the block Hawkes model and a
    /// discrete-time baseline.
    Predict(PredictFlags),
    /// Monte Carlo check of the dependence bound between adjacency entries.
    CheckTheorem(CheckTheoremFlags),
    /// Adjusted Rand index between two labelings.
    EvalAri(EvalAriFlags),
    /// Aggregate events in a time window into an adjacency list.
    Aggregate(AggregateFlags),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Serialize)]
struct SimulateFlags {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long = "k", alias = "classes")]
    classes: Option<usize>,
    /// Comma-separated class probabilities.
    #[arg(long, value_delimiter = ',')]
    class_probs: Option<Vec<f64>>,
    /// Diagonal block-pair parameters `alpha,beta,lambda_inf`.
    #[arg(long, value_parser = parse_triple)]
    diagonal: Option<Triple>,
    #[arg(long, value_parser = parse_triple)]
    off_diagonal: Option<Triple>,
    /// Model JSON overriding K, class probabilities and parameters.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FitFlags {
    /// Event CSV with header `sender,receiver,time`.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long = "k", alias = "classes")]
    classes: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    scaled: bool,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    horizon_mode: Option<Horizon>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpectralFlags {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long = "k", alias = "classes")]
    classes: Option<usize>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    scaled: bool,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PredictFlags {
    #[arg(long)]
    events: Option<PathBuf>,
    /// Labels CSV with header `node,label`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    windows: Option<usize>,
    /// Comma-separated snapshot lengths in hours.
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    #[arg(long)]
    time_unit_hours: Option<f64>,
    #[arg(long, value_enum)]
    horizon_mode: Option<Horizon>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CheckTheoremFlags {
    /// Comma-separated network sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    alpha_per_node: Option<f64>,
    #[arg(long)]
    beta_per_node: Option<f64>,
    #[arg(long)]
    lambda_per_node: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalAriFlags {
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Also write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AggregateFlags {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    weighted: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    /// Bad flags or settings.
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<bppm::Error> for Failure {
    fn from(e: bppm::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn report(kind: &str, message: String) {
    let record = json!({"error": {"kind": kind, "message": message}});
    eprintln!("{record}");
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<bppm::Error>()) {
        return match err {
            bppm::Error::Io(_) => "io",
            bppm::Error::Csv(_) | bppm::Error::Parse { .. } => "parse",
            bppm::Error::Validation(_) | bppm::Error::InvalidArgument(_) | bppm::Error::Inconsistent(_) => {
                "validation"
            }
            bppm::Error::Supercritical { .. } | bppm::Error::Numerical(_) => "numerical",
        };
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return "io";
    }
    "runtime"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report("usage", e.kind().to_string() + ": " + e.to_string().lines().next().unwrap_or(""));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("usage", format!("cannot start {n} worker threads: {e}"));
            return ExitCode::from(2);
        }
    }
    let file = cli.config.as_deref();
    let result = match &cli.command {
        Command::Simulate(f) => commands::simulate(file, f),
        Command::Fit(f) => commands::fit(file, f),
        Command::Spectral(f) => commands::spectral(file, f),
        Command::Predict(f) => commands::predict(file, f),
        Command::CheckTheorem(f) => commands::check_theorem(file, f),
        Command::EvalAri(f) => commands::eval_ari(file, f),
        Command::Aggregate(f) => commands::aggregate(file, f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            report("usage", format!("{e:#}"));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            report(error_kind(&e), format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}
