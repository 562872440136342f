//! `esmc` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esmc_core::EsmcError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_config, resolve, Count};

#[derive(Parser)]
#[command(
    name = "esmc",
    version,
    about = "Multi-label classification with sparse GP label embeddings"
)]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a labeled file and an optional unlabeled pool.
    Train(TrainArgs),
    /// Fit the linear label-embedding baseline.
    Baseline(BaselineArgs),
    /// Score a dataset with a saved model.
    Predict(PredictArgs),
    /// Compute ranking metrics for a score file.
    Eval(EvalArgs),
    /// Simulate missing labels or unlabeled instances.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Sample a synthetic dataset from the generative model.
    Synth(SynthArgs),
    /// Print label probability against suitability for several expert counts.
    Curves(CurvesArgs),
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Remove a fraction of the positive labels.
    DropLabels(DropLabelsArgs),
    /// Keep labels for a fraction of the instances only.
    DropInstances(DropInstancesArgs),
    /// Hold out a seeded fraction of the labeled instances for testing.
    Split(SplitArgs),
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// ELBO trace file [default: <out>.trace.csv]
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Latent dimension L [default: min(20, K)]
    #[arg(long)]
    latent: Option<usize>,
    /// Pseudo-points per layer, or `auto` [default: auto]
    #[arg(long)]
    pseudo: Option<Count>,
    /// Experts per label, or `auto` [default: auto]
    #[arg(long)]
    experts: Option<Count>,
    /// Suitability scale [default: 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Maximum sweeps [default: 50]
    #[arg(long)]
    iters: Option<usize>,
    /// Relative ELBO change that stops training [default: 1e-5]
    #[arg(long)]
    tol: Option<f64>,
    /// `corrected` or `paper` [default: corrected]
    #[arg(long)]
    xi_rule: Option<String>,
    /// Keep the latent pseudo-points fixed.
    #[arg(long)]
    #[serde(skip)]
    no_propagate: bool,
    /// No progress output.
    #[arg(long)]
    #[serde(skip)]
    quiet: bool,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Latent dimension [default: min(20, K)]
    #[arg(long)]
    latent: Option<usize>,
    /// Ridge penalty [default: 1]
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write label probabilities instead of raw scores.
    #[arg(long)]
    #[serde(skip)]
    prob: bool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Dataset file holding the true labels.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// auc, coverage, p@k, microf1max; repeatable or comma-separated [default: all]
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// `instance` or `macro` [default: instance]
    #[arg(long)]
    averaging: Option<String>,
    /// Report file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DropLabelsArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fraction of positive labels to remove, in [0, 1).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Removed (instance, label) pairs [default: <out>.removed.csv]
    #[arg(long)]
    removed: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DropInstancesArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fraction of instances that keep their labels, in (0, 1].
    #[arg(long)]
    keep: Option<f64>,
    #[arg(long)]
    out_labeled: Option<PathBuf>,
    #[arg(long)]
    out_unlabeled: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fraction of labeled instances held out, in (0, 1).
    #[arg(long)]
    test: Option<f64>,
    #[arg(long)]
    out_train: Option<PathBuf>,
    #[arg(long)]
    out_test: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Labeled instances.
    #[arg(long)]
    n: Option<usize>,
    /// Unlabeled instances [default: 0]
    #[arg(long)]
    unlabeled: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    labels: Option<usize>,
    /// Latent dimension [default: min(3, K)]
    #[arg(long)]
    latent: Option<usize>,
    /// Experts per label [default: 1]
    #[arg(long)]
    experts: Option<usize>,
    /// Suitability scale [default: 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Pseudo-points per layer, or `auto` [default: auto]
    #[arg(long)]
    pseudo: Option<Count>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suitability matrix [default: <out>.z.csv]
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CurvesArgs {
    /// Expert counts, comma-separated [default: 1,2,5,10,20]
    #[arg(long, value_delimiter = ',')]
    experts: Option<Vec<usize>>,
    /// Suitability scale [default: 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn flags<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("flag structs always serialize")
}

fn with(mut v: Value, key: &str, set: bool, value: Value) -> Value {
    if set {
        v[key] = value;
    }
    v
}

fn run(cli: Cli) -> Result<(), EsmcError> {
    let file = read_config(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => {
            let v = with(flags(&a), "propagate", a.no_propagate, json!(false));
            let v = with(v, "quiet", a.quiet, json!(true));
            commands::train(resolve(&file, "train", seed, true, v)?)
        }
        Command::Baseline(a) => {
            commands::baseline(resolve(&file, "baseline", seed, false, flags(&a))?)
        }
        Command::Predict(a) => {
            let v = with(flags(&a), "prob", a.prob, json!(true));
            commands::predict(resolve(&file, "predict", seed, false, v)?)
        }
        Command::Eval(a) => commands::eval(resolve(&file, "eval", seed, false, flags(&a))?),
        Command::Simulate(SimulateCommand::DropLabels(a)) => {
            commands::drop_labels_cmd(resolve(&file, "drop-labels", seed, true, flags(&a))?)
        }
        Command::Simulate(SimulateCommand::DropInstances(a)) => {
            commands::drop_instances_cmd(resolve(&file, "drop-instances", seed, true, flags(&a))?)
        }
        Command::Simulate(SimulateCommand::Split(a)) => {
            commands::split_cmd(resolve(&file, "split", seed, true, flags(&a))?)
        }
        Command::Synth(a) => commands::synth(resolve(&file, "synth", seed, true, flags(&a))?),
        Command::Curves(a) => commands::curves(resolve(&file, "curves", seed, false, flags(&a))?),
    }
}

/// Exit code for each error class.
fn exit_code(err: &EsmcError) -> u8 {
    match err {
        EsmcError::InvalidArgument(_) => 2,
        EsmcError::Parse { .. } | EsmcError::Format { .. } => 3,
        EsmcError::Numerical { .. } => 4,
        EsmcError::Io { .. } => 5,
        EsmcError::DegenerateInput(_) | EsmcError::BudgetExceeded(_) => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("esmc: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
