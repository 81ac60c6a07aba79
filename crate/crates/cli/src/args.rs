use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fpsr_core::data::{ResampleMethod, Split};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fpsr", version, about = "Wavelet-domain GAN super-resolution for grayscale slices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a paired LR/HR dataset and its manifest.
    Prepare(PrepareArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Super-resolve one image with a trained checkpoint.
    Sr(SrArgs),
    /// Compute PSNR/SSIM of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Render a difference heatmap between two images.
    Diffmap(DiffmapArgs),
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(v @ (2 | 4 | 8)) => Ok(v),
        _ => Err(format!("scale must be 2, 4 or 8, got {s:?}")),
    }
}

fn parse_depth(s: &str) -> Result<u8, String> {
    match s.parse() {
        Ok(v @ (8 | 16)) => Ok(v),
        _ => Err(format!("bit depth must be 8 or 16, got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Directory of PNG/PGM slices, or `phantom:N` for N synthetic phantoms
    #[arg(long)]
    pub source: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Downsampling factor (2, 4 or 8)
    #[arg(long, default_value_t = 4, value_parser = parse_scale)]
    pub scale: usize,
    /// Side of the centered HR crop
    #[arg(long, default_value_t = 200)]
    pub crop: usize,
    /// Seed for phantoms and the split shuffle
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Downsampling kernel
    #[arg(long, default_value_t = ResampleMethod::Bicubic)]
    pub method: ResampleMethod,
    /// Train, val and test fractions
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub splits: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TOML training config
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for logs, evaluations and checkpoints
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Dataset manifest [default: from config]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Total training steps [default: from config]
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Seed [default: from config]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch size [default: from config]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Evaluate every N steps, 0 disables [default: from config]
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Checkpoint every N steps, 0 disables [default: from config]
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Print a progress line every N steps, 0 silences it
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SrArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Low-resolution grayscale image
    #[arg(long)]
    pub input: PathBuf,
    /// Output image (.png or .pgm)
    #[arg(long)]
    pub output: PathBuf,
    /// Output bit depth (8 or 16)
    #[arg(long, default_value_t = 16, value_parser = parse_depth)]
    pub depth: u8,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub csv: PathBuf,
    /// Also score bicubic and bilinear upsampling
    #[arg(long, default_value_t = false)]
    pub baselines: bool,
    /// Split to evaluate
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Directory for sample grids and heatmaps
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// Number of samples written to --artifacts
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffmapArgs {
    /// First image
    #[arg(long)]
    pub a: PathBuf,
    /// Second image
    #[arg(long)]
    pub b: PathBuf,
    /// Output heatmap PNG
    #[arg(long)]
    pub out: PathBuf,
}
