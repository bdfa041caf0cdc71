//! Command-line driver: synthetic data generation, two-stage training,
//! evaluation, ablation sweeps, and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 usage, 2 data/IO, 3 numeric/dimension.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "taeclsa", version, about = "ECG token-sequence classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train the temporal autoencoder with the two-batch protocol.
    TrainTae(TrainTaeArgs),
    /// Train the classifier on top of a trained autoencoder.
    TrainClsa(TrainClsaArgs),
    /// Evaluate a trained pipeline on one split.
    Evaluate(EvaluateArgs),
    /// Sweep one hyperparameter grid and emit a CSV of results.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient-check suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Records per class.
    #[arg(long)]
    per_class: usize,
    /// Samples per record.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTaeArgs {
    /// Dataset directory (records.csv + .ecg files).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    /// Bottleneck width.
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the checkpoint and loss CSVs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    smote_k: Option<usize>,
    /// Train target→target instead of context→target.
    #[arg(long)]
    identity_ae: bool,
    /// Rectify the reconstruction layer (the literal table reading).
    #[arg(long)]
    relu_output: bool,
    /// Add the extra 12→12 output layer.
    #[arg(long)]
    extra_output_layer: bool,
    /// Oversample before splitting instead of the leak-free default.
    #[arg(long)]
    paper_faithful: bool,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainClsaArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained autoencoder checkpoint; omit to train without compression.
    #[arg(long)]
    tae: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    conv_filters: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    lstm_units: Option<usize>,
    #[arg(long)]
    dense1: Option<usize>,
    #[arg(long)]
    dense2: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    l2_kernel: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    smote_k: Option<usize>,
    /// Unfreeze the embedding matrix during training.
    #[arg(long)]
    finetune_embedding: bool,
    /// Learnable attention projections instead of query-equals-key.
    #[arg(long)]
    attention_projections: bool,
    #[arg(long, value_enum)]
    attention_pool: Option<PoolArg>,
    /// Sigmoid output activation (multi-label reading).
    #[arg(long)]
    sigmoid_output: bool,
    #[arg(long)]
    paper_faithful: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Mean,
    Last,
    Max,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained pipeline checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Where to write the JSON metric report.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct AblateArgs {
    /// Which grid to sweep.
    #[arg(long, value_enum)]
    grid: GridArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the grid CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tae_epochs: Option<usize>,
    /// Conv filters for non-units grids (defaults to the full 512).
    #[arg(long)]
    conv_filters: Option<usize>,
    /// LSTM units for non-units grids (defaults to the full 256).
    #[arg(long)]
    lstm_units: Option<usize>,
    /// Divide the units-grid widths by this factor for desk-scale runs.
    #[arg(long, default_value_t = 1)]
    width_scale: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Window,
    Latent,
    Units,
    Tae,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random evaluation points per op.
    #[arg(long, default_value_t = 10)]
    points: usize,
}

/// CLI-level failure with its exit bucket.
enum CliError {
    Usage(String),
    Core(taeclsa_core::Error),
    /// Gradient-check failures (numeric bucket).
    Numeric(String),
}

impl From<taeclsa_core::Error> for CliError {
    fn from(e: taeclsa_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::TrainTae(args) => commands::train_tae::run(args),
        Command::TrainClsa(args) => commands::train_clsa::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
