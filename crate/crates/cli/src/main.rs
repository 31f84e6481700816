//! `downscale`: command-line driver for the downscaling pipeline.
//!
//! Every subcommand writes its outputs plus a `manifest.json` (input and
//! output hashes, parameters, tool version) next to its main output.
//! Exit codes: 0 success, 2 usage or validation error, 1 internal error.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "downscale", version, about = "Patch-based raster downscaling pipeline")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "DOWNSCALE_THREADS")]
    threads: Option<usize>,
    /// Manifest path (default: manifest.json beside the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bicubic interpolation or block averaging onto a target grid.
    Regrid(RegridArgs),
    /// Seasonal target days and the chronological train/val/test split.
    Split(SplitArgs),
    /// Cut 16×16 (or other) patches from a stack.
    Patch(PatchArgs),
    /// Hann-tapered stitching of predicted patches.
    Stitch(StitchArgs),
    /// Per-day and pooled Wasserstein distances between two stacks.
    Wd(WdArgs),
    /// Mean daily semivariogram and spherical fit.
    Variogram(VariogramArgs),
    /// ACF/PACF of the regional mean series.
    Acf(AcfArgs),
    /// Image-wise RMSE and R² between days t and t−lag.
    Lagmetrics(LagArgs),
    /// Pixel-wise skill scores of a prediction stack.
    Eval(EvalArgs),
    /// Day-by-day prediction with a configured predictor.
    Rollout(RolloutArgs),
    /// Synthetic end-to-end run with a printed summary.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegridMethod {
    Bicubic,
    Blockmean,
}

#[derive(Args, Serialize)]
pub struct RegridArgs {
    #[arg(long, value_enum)]
    pub method: RegridMethod,
    /// Stack or static field (.npy with sidecar).
    #[arg(long)]
    pub src: PathBuf,
    /// Sidecar JSON whose lat/lon define the target grid.
    #[arg(long)]
    pub target_grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct SplitArgs {
    /// Stack (.npy) or sidecar (.meta.json) supplying the daily calendar.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub season: String,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    /// Fraction of train days held out at the end of the train block.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
    /// split.json; a date,role CSV is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleArg {
    Train,
    Val,
    Test,
}

#[derive(Args, Serialize)]
pub struct PatchArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Restrict to one role of this split, grouped and shuffled by day.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train", requires = "split")]
    pub role: RoleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// N × 1 × size × size patch array.
    #[arg(long)]
    pub out: PathBuf,
    /// patches.json index (day, y0, x0 per row).
    #[arg(long)]
    pub index: PathBuf,
}

#[derive(Args, Serialize)]
pub struct StitchArgs {
    /// N × H × W or N × 1 × H × W predictions, rows as in the index.
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Halo width trimmed from interior patch edges.
    #[arg(long = "h", default_value_t = 2)]
    pub halo: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Sidecar JSON giving lat/lon of the image; pixel indices otherwise.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-day coverage (1 = covered) as D × H × W uint8.
    #[arg(long)]
    pub mask_out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct WdArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// H × W validity mask (nonzero = valid).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct VariogramArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 600.0)]
    pub max_km: f64,
    #[arg(long, default_value_t = 24)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct AcfArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub max_lag: usize,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct LagArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_lag: usize,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Autoregressive,
    Overlap,
}

#[derive(Args, Serialize)]
pub struct RolloutArgs {
    /// Predictor TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Fine stack: context, ridge training targets and overlap truth.
    #[arg(long)]
    pub fine: PathBuf,
    /// Driver stack on the fine grid.
    #[arg(long)]
    pub drivers: PathBuf,
    /// Static elevation on the fine grid.
    #[arg(long)]
    pub elevation: PathBuf,
    /// Last known day (default: last fine day).
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Days to predict (default: every consecutive driver day).
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, value_enum, default_value = "autoregressive")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted ridge model here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct DemoArgs {
    #[arg(long, default_value = "demo_out")]
    pub out_dir: PathBuf,
    /// Overrides the world seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Demo TOML (world, season, t_lag, lambda, ...); defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the raw coarse/fine/elevation stacks.
    #[arg(long)]
    pub world: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
