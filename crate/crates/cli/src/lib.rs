//! The `csgan` command line: train, eval, infer and grid.

pub mod commands;
pub mod config;
pub mod grid;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Failure of a command. `code()` is the machine-greppable reason printed with it.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(csgan::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "USAGE",
            CliError::Core(e) => e.reason_code(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<csgan::Error> for CliError {
    fn from(e: csgan::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "csgan", version, about = "Cyclic-synthesized GAN for paired image-to-image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, the loss log and the resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Translate one image.
    Infer(InferArgs),
    /// Compose a comparison grid: input, ground truth, one column per checkpoint.
    Grid(GridArgs),
}

/// Settings shared by every command; each maps onto a config key.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gan, pix2pix, cyclegan, ps2gan or csgan.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    /// split-folders or combined-ab.
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long)]
    pub epochs: Option<i64>,
    #[arg(long)]
    pub batch_size: Option<i64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Cycle weight for both domains.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Cyclic-synthesized weight for both domains.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub seed: Option<i64>,
    #[arg(long)]
    pub image_size: Option<i64>,
    /// Comma-separated subset of mse,psnr,ssim,lpips.
    #[arg(long)]
    pub metrics: Option<String>,
    /// a2b or b2a.
    #[arg(long)]
    pub direction: Option<String>,
    /// Output directory (default: config `output_dir`, then $CSGAN_OUT_DIR, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, required_unless_present = "identity")]
    pub checkpoint: Option<PathBuf>,
    /// Score an identity generator instead of a checkpoint (a baseline).
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Repeat once per column.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Grid(a) => commands::grid(&a),
    }
}
