mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use nai_core::distill::{Activation, TeacherMix};
use nai_core::propagation::Backend;
use nai_core::NaiError;

/// Node-adaptive inference for linear-propagation graph neural networks.
///
/// Every command also accepts `--config FILE` with one `key = value` per
/// line, keys named like the long flags. Flags on the command line override
/// values from the file.
#[derive(Parser, Debug)]
#[command(name = "nai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a stochastic-block-model dataset.
    Gen(GenArgs),
    /// Train the top-order classifier.
    Train(TrainArgs),
    /// Distill the top-order classifier into one classifier per order.
    Distill(DistillArgs),
    /// Run node-adaptive inference with one configuration.
    Infer(InferArgs),
    /// Compare vanilla inference with node-adaptive configurations.
    Bench(BenchArgs),
    /// Search thresholds on validation nodes.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// Read flags from a `key = value` file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct GenArgs {
    /// Preset: sbm-small or sbm-4k.
    #[arg(long, default_value = "sbm-small")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Node count.
    #[arg(long)]
    n: Option<usize>,
    /// Number of blocks, which is also the class count.
    #[arg(long)]
    blocks: Option<usize>,
    /// Edge probability inside a block.
    #[arg(long)]
    p_in: Option<f64>,
    /// Edge probability across blocks.
    #[arg(long)]
    p_out: Option<f64>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Norm of every class mean.
    #[arg(long)]
    mu: Option<f64>,
    /// Feature noise.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    labeled_frac: Option<f64>,
    #[arg(long)]
    unlabeled_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    /// Also run the raw-versus-propagated calibration and write calibration.txt.
    #[arg(long)]
    calibrate: bool,
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(Args, Debug, Clone)]
struct PropagationArgs {
    /// Propagation backend: sgc, s2gc or sign.
    #[arg(long, default_value = "sgc")]
    backend: Backend,
    /// Propagation order of the top classifier.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Normalization coefficient r of D^(r-1) A D^(-r).
    #[arg(long, default_value_t = 0.5)]
    r_coef: f64,
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prop: PropagationArgs,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Hidden layer widths, comma separated. Empty trains a linear model.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MixArg {
    Probs,
    Logits,
}

impl From<MixArg> for TeacherMix {
    fn from(m: MixArg) -> Self {
        match m {
            MixArg::Probs => TeacherMix::Probabilities,
            MixArg::Logits => TeacherMix::Logits,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ActivationArg {
    Tanh,
    Sigmoid,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct DistillArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    teacher: PathBuf,
    /// Bank directory.
    #[arg(long)]
    out: PathBuf,
    /// Expected backend; must match the checkpoint.
    #[arg(long)]
    backend: Option<Backend>,
    /// Expected order; must match the checkpoint.
    #[arg(long)]
    k: Option<usize>,
    /// Expected normalization coefficient; must match the checkpoint.
    #[arg(long)]
    r_coef: Option<f64>,
    /// Distillation temperature.
    #[arg(long, default_value_t = 1.2)]
    temp: f64,
    /// Weight of the distillation loss.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Number of top-order classifiers in the ensemble teacher.
    #[arg(long, default_value_t = 3)]
    r_ens: usize,
    #[arg(long, default_value_t = 200)]
    offline_epochs: usize,
    #[arg(long, default_value_t = 100)]
    online_epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Activation of the ensemble scorer.
    #[arg(long, value_enum, default_value = "tanh")]
    activation: ActivationArg,
    /// Mix member probabilities or member logits in the ensemble teacher.
    #[arg(long, value_enum, default_value = "probs")]
    teacher_mix: MixArg,
    /// Keep the ensemble members fixed during online distillation.
    #[arg(long)]
    stop_teacher_grad: bool,
    /// Skip online distillation.
    #[arg(long)]
    offline_only: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SplitArg {
    Test,
    Validation,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DistanceArg {
    Raw,
    Normalized,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Bank directory written by `distill`.
    #[arg(long)]
    bank: PathBuf,
    /// Nodes per inference batch.
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
}

#[derive(Args, Debug, Clone)]
struct InferArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Exit threshold on the distance to the stationary state.
    #[arg(long, default_value_t = 0.0)]
    ts: f64,
    /// Smallest exit order.
    #[arg(long, default_value_t = 1)]
    tmin: usize,
    /// Largest order; defaults to the bank order.
    #[arg(long)]
    tmax: Option<usize>,
    #[arg(long, value_enum, default_value = "raw")]
    distance: DistanceArg,
    /// Nodes to classify.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Run batches on all cores.
    #[arg(long)]
    parallel: bool,
    /// Directory for predictions.csv and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Adaptive configurations as `ts:tmin:tmax`, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    nai: Vec<String>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Directory for comparison.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArg,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Thresholds, comma separated. Without them each order pair gets
    /// thresholds at quantiles of the observed distances.
    #[arg(long, value_delimiter = ',')]
    ts: Vec<f64>,
    /// Candidate T_min values; defaults to 1..=k.
    #[arg(long, value_delimiter = ',')]
    tmin: Vec<usize>,
    /// Candidate T_max values; defaults to 1..=k.
    #[arg(long, value_delimiter = ',')]
    tmax: Vec<usize>,
    /// Accuracy loss, in points, allowed when picking the cheapest config.
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    /// Drop candidates above this many FP mMACs per node.
    #[arg(long)]
    max_fp_mmacs: Option<f64>,
    /// Directory for candidates.csv and pareto.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArg,
}

fn exit_code(e: &NaiError) -> u8 {
    match e {
        NaiError::Config(_) => 2,
        NaiError::Input(_) | NaiError::Io(_) => 3,
        NaiError::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let cli = match cmd
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Distill(a) => commands::distill(a),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
