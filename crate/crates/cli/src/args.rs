use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vigc", version, about = "Two-frame video inbetweening with affine motion layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every differentiable op against central finite differences
    Gradcheck,
    /// Train the generator and critic from a TOML config
    Train(TrainArgs),
    /// Complete clips between a start and an end frame
    Infer(InferArgs),
    /// Write synthetic clips as PNG frames and validate their motion
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory for losses.csv, checkpoints and sample grids [default: paths.out_dir]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// First frame (PNG)
    #[arg(long, value_name = "PNG")]
    pub start: PathBuf,
    /// Last frame (PNG)
    #[arg(long, value_name = "PNG")]
    pub end: PathBuf,
    /// Number of completions, each with its own latent code
    #[arg(long, value_name = "M", default_value_t = 1)]
    pub samples: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Seed for the latent codes
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    MovingMnist,
    Shapes2d,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Which synthetic dataset to draw from
    #[arg(long, value_enum)]
    pub dataset: DatasetArg,
    /// Master seed; clip i is a pure function of (seed, i)
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    /// Number of clips
    #[arg(long, value_name = "N")]
    pub count: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// MNIST training images (IDX); required for moving-mnist
    #[arg(long, value_name = "PATH")]
    pub mnist_idx: Option<PathBuf>,
    /// Frame side in pixels
    #[arg(long, value_name = "PX", default_value_t = 64)]
    pub image_size: usize,
}
