use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nca_core::LossKind;

#[derive(Debug, Parser)]
#[command(
    name = "nca",
    version,
    about = "Neural cellular automata: training, rendering and motion analysis"
)]
#[command(
    after_help = "Set NCA_LOG=debug|info|warn to control diagnostics on stderr. \
Exit codes: 2 usage, 3 I/O, 4 numeric failure, 5 bad data."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an NCA to reproduce the texture of a target image.
    Train(TrainArgs),
    /// Render frames of a trained model after a warm-up period.
    Rollout(RolloutArgs),
    /// Measure motion strength from a model or a directory of frames.
    Measure(MeasureArgs),
    /// Train and measure every (C, D) configuration of a sweep.
    Sweep(SweepArgs),
    /// Correlate motion strength with architecture in a sweep CSV.
    Report(ReportArgs),
}

/// Grid size written as `HxW`, e.g. `128x128`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub height: usize,
    pub width: usize,
}

fn parse_size(s: &str) -> Result<Size, String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad dimension `{v}` in `{s}`"))
    };
    Ok(Size {
        height: dim(h)?,
        width: dim(w)?,
    })
}

fn positive(what: &'static str) -> impl Fn(&str) -> Result<usize, String> + Clone {
    move |s| match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        Ok(_) => Err(format!("{what} must be ≥ 1")),
        Err(e) => Err(format!("{what}: {e}")),
    }
}

fn positive_real(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Target texture (PNG).
    #[arg(long)]
    pub target: PathBuf,
    /// State channels C; the first three render as RGB.
    #[arg(long, value_parser = positive("channels"))]
    pub channels: usize,
    /// Hidden width D of the update network.
    #[arg(long, value_parser = positive("hidden"))]
    pub hidden: usize,
    /// Optimizer steps.
    #[arg(long, default_value_t = 6000, value_parser = positive("epochs"))]
    pub epochs: usize,
    /// Training grid as HxW [default: size of the target image].
    #[arg(long, value_parser = parse_size)]
    pub size: Option<Size>,
    /// Appearance loss: gram (position-free texture statistics) or mse.
    #[arg(long, default_value_t = LossKind::Gram)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per optimizer step.
    #[arg(long, default_value_t = 4, value_parser = positive("batch size"))]
    pub batch_size: usize,
    /// Persistent sample pool size.
    #[arg(long, default_value_t = 256, value_parser = positive("pool size"))]
    pub pool_size: usize,
    /// Shortest rollout per training sample.
    #[arg(long, default_value_t = 32, value_parser = positive("t-min"))]
    pub t_min: usize,
    /// Longest rollout per training sample.
    #[arg(long, default_value_t = 64, value_parser = positive("t-max"))]
    pub t_max: usize,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_real)]
    pub lr: f64,
    /// Weight of the penalty on state values outside [-1, 1]; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    pub overflow_weight: f64,
    /// Train in 64-bit floating point (the checkpoint is always 32-bit).
    #[arg(long)]
    pub f64: bool,
    /// Checkpoint path.
    #[arg(long, default_value = "model.nca")]
    pub out: PathBuf,
    /// Loss curve CSV [default: <out>.loss.csv].
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// NCA steps between consecutive frames (T = 32 in the standard protocol).
    #[arg(long, default_value_t = 32, value_parser = positive("steps per frame"))]
    pub steps_per_frame: usize,
    /// Frames generated and discarded before capture (100 in the standard protocol).
    #[arg(long, default_value_t = 100)]
    pub warmup_frames: usize,
    /// Grid as HxW.
    #[arg(long, value_parser = parse_size, default_value = "128x128")]
    pub size: Size,
    /// Seed of the initial state and update masks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Frames after the first captured one; n + 1 PNGs are written.
    #[arg(long, value_parser = positive("frames"))]
    pub frames: usize,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, default_value = "frames")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["frames_dir", "model"])))]
pub struct MeasureArgs {
    /// Directory of PNG frames, taken in file-name order as-is.
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
    /// Checkpoint to render and measure with the warm-up protocol.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Frame pairs measured after warm-up (model source only; 100 in the standard protocol).
    #[arg(long, default_value_t = 100, value_parser = positive("measured frames"))]
    pub measured_frames: usize,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Horn-Schunck smoothness weight, in grey levels.
    #[arg(long, default_value_t = 1.0, value_parser = positive_real)]
    pub alpha: f64,
    /// Horn-Schunck Jacobi iterations.
    #[arg(long, default_value_t = 200, value_parser = positive("iterations"))]
    pub iterations: usize,
    /// Per-pair motion strength CSV.
    #[arg(long, default_value = "psi.csv")]
    pub out_csv: PathBuf,
    /// Summary JSON.
    #[arg(long, default_value = "psi.json")]
    pub out_json: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Result CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse rows with status ok from an earlier run.
    #[arg(long)]
    pub resume: bool,
    /// Worker threads [default: value in the config, else 1].
    #[arg(long, value_parser = positive("jobs"))]
    pub jobs: Option<usize>,
    /// Print the plan and exit without training.
    #[arg(long)]
    pub plan_only: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep CSV.
    #[arg(long)]
    pub csv: PathBuf,
    /// Permutations per p-value.
    #[arg(long, default_value_t = 10_000, value_parser = positive("perms"))]
    pub perms: usize,
    /// Seed of the permutation shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the human-readable table here (it always goes to stderr).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
