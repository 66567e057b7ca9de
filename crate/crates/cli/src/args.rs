use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "biaspot",
    version,
    about = "Train and evaluate bias-potential density models"
)]
pub struct Cli {
    /// Worker threads (defaults to the number of available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// TOML file of `flag = value` pairs; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit a random-feature potential to a target.
    Train(TrainArgs),
    /// Run one of the bundled experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Draw samples from a potential's density.
    Sample(SampleArgs),
    /// Evaluate a metric on saved artifacts.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentCommand {
    /// Sample-complexity exponents of early-stopped training.
    Rate(RateArgs),
    /// Test KL and norm curves of long training on a small sample.
    Memorize(MemorizeArgs),
    /// KL of feature-subsampled potentials against the full potential.
    Approx(ApproxArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Gd,
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerArg {
    Oracle,
    Langevin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionArg {
    Averaged,
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Kl,
    Loss,
    RkhsNorm,
    LogPartition,
}

#[derive(Args, Debug, Serialize)]
pub struct LangevinArgs {
    /// Langevin step size.
    #[arg(long, default_value_t = 1e-3)]
    pub langevin_step: f64,
    #[arg(long, default_value_t = 5000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thinning: usize,
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Input dimension.
    #[arg(long)]
    pub d: usize,
    /// Number of random features.
    #[arg(long)]
    pub m: usize,
    /// Target: a potential JSON (population target) or a sample CSV.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Potential JSON whose density is used for test KL; defaults to the
    /// target when the target is a potential.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Gd)]
    pub opt: OptimizerArg,
    /// Step size on the functional gradient.
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Minibatch size for sgd.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    /// Radius of the coefficient-norm ball for projected training.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Steps at which coefficient snapshots are written.
    #[arg(long, value_delimiter = ',')]
    pub snapshot_steps: Vec<usize>,
    /// Grid points per axis (default depends on d).
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Seed for the random features (defaults to --seed).
    #[arg(long)]
    pub feature_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct RateArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 50.0)]
    pub a_star: f64,
    /// Step cap per trial.
    #[arg(long, default_value_t = 60_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Stop once test KL exceeds this multiple of its running minimum ...
    #[arg(long, default_value_t = 1.25)]
    pub stop_rise: f64,
    /// ... and the step is at least this multiple of the minimizing step.
    #[arg(long, default_value_t = 2.0)]
    pub stop_step_ratio: f64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Oracle)]
    pub sampler: SamplerArg,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    #[arg(long, value_enum, default_value_t = RegressionArg::Averaged)]
    pub regression: RegressionArg,
    /// Grid points per axis for every d (default depends on d).
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "rate_out")]
    pub out: PathBuf,
    /// Also write an SVG plot.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct MemorizeArgs {
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    #[arg(long, default_value_t = 50.0)]
    pub a_star: f64,
    #[arg(long, default_value_t = 100_000)]
    pub steps: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "160,1000,10000,100000")]
    pub snapshots: Vec<usize>,
    /// Steps of the population-target control run (0 skips it).
    #[arg(long, default_value_t = 10_000)]
    pub control_steps: usize,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "memorize_out")]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ApproxArgs {
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 10_000)]
    pub m_ref: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256,512,1024,2048,4096")]
    pub ms: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub resamples: usize,
    /// Constant coefficient value of the reference potential.
    #[arg(long, default_value_t = 50.0)]
    pub a_ref: f64,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "approx_out")]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    /// Potential JSON to sample from.
    #[arg(long)]
    pub potential: PathBuf,
    #[arg(long)]
    pub n: i64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Oracle)]
    pub sampler: SamplerArg,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    /// Grid points per axis for the oracle sampler.
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "sample_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// First artifact: a potential JSON or a density CSV.
    #[arg(long)]
    pub p: PathBuf,
    /// Second artifact for kl (potential JSON or density CSV), or the
    /// population target for loss.
    #[arg(long)]
    pub q: Option<PathBuf>,
    /// Sample CSV used as the target for loss.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
