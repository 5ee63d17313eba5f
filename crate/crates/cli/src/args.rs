use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "tpnet", version, about = "Soft-body point-set dynamics: simulate, train, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a corpus of trajectories.
    GenData(GenDataArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Report rollout errors of a checkpoint at fixed horizons.
    Eval(EvalArgs),
    /// Export one rollout as SVG overlays plus a per-step error CSV.
    Rollout(RolloutArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Time forward passes over point counts, or measure rollout throughput.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Test,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingArg {
    Identity,
    AscX,
    DescY,
    Shuffle,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trajectories: u64,
    /// Frames per trajectory, including the initial one.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Default world and initial-condition grid (the default anyway; spelled out for scripts).
    #[arg(long, conflicts_with = "config")]
    pub default_grid: bool,
    /// JSON file with optional `world` and `grid` objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which side of the held-out partition to draw initial conditions from.
    #[arg(long, value_enum, default_value_t = SplitArg::Any)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Input frames per window.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(3..=5))]
    pub m: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON model config; `n_points` and `m_frames` are overridden from the data and `--m`.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Windows per trajectory that overlap a wall contact.
    #[arg(long, default_value_t = 15)]
    pub collision_windows: usize,
    /// Windows per trajectory without a contact.
    #[arg(long, default_value_t = 5)]
    pub normal_windows: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub ortho_weight: f64,
    #[arg(long)]
    pub truncate_feedback: bool,
    /// CSV log path (default: `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Resolve flags, sample windows and print the plan without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Evaluate the rigid constant-velocity baseline instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub baseline: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "40,80")]
    pub horizons: Vec<usize>,
    /// Input frames; taken from the checkpoint when omitted.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub m: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "identity")]
    pub ordering: Vec<OrderingArg>,
    /// Seed of the shuffle ordering.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One trajectory file from a corpus.
    #[arg(long)]
    pub traj: PathBuf,
    /// Index of the first input frame.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value_t = 80, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    pub coordinates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON model config to check instead of the built-in small one.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("kind").required(true).args(["scaling", "throughput"])))]
pub struct ProbeArgs {
    #[arg(long)]
    pub scaling: bool,
    #[arg(long)]
    pub throughput: bool,
    /// Base JSON model config (default: the standard architecture).
    #[arg(long, conflicts_with = "model")]
    pub model_config: Option<PathBuf>,
    /// Checkpoint to time in the throughput probe.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "30,60,120,240,480")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Minimum wall time of the throughput probe.
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}
