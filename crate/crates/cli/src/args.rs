use std::path::PathBuf;

use alq_core::alq::Scorer;
use alq_core::net::Optimizer;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "alq",
    version,
    about = "Train, quantize and evaluate a 1-D CNN ECG classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic 17-class dataset
    Synth(SynthArgs),
    /// Train the full-precision network
    Train(TrainArgs),
    /// Quantize a trained checkpoint into a packed model
    Quantize(QuantizeArgs),
    /// Evaluate a checkpoint or packed model on a dataset
    Eval(EvalArgs),
    /// Quantize at several prune rates and record bitwidth, loss and accuracy
    Sweep(SweepArgs),
    /// Write the memory report of a packed model
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Raw,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset path (.csv, or the raw binary format)
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides detection by file extension
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Also split: `--out` receives the training part, this path the rest
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint output path
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Seeds both initialization and training
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ScorerArg {
    Magnitude,
    LossAware,
}

impl From<ScorerArg> for Scorer {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::Magnitude => Scorer::Magnitude,
            ScorerArg::LossAware => Scorer::LossAware,
        }
    }
}

#[derive(Args, Debug)]
pub struct AlqArgs {
    /// JSON quantization config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Same maximum bitwidth for every layer
    #[arg(long)]
    pub i_max: Option<usize>,
    #[arg(long, conflicts_with = "target_bitwidth")]
    pub prune_rate: Option<f64>,
    #[arg(long)]
    pub target_bitwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    #[arg(long)]
    pub refine_iters: Option<usize>,
    #[arg(long)]
    pub calib_batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    /// Full-precision checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Calibration dataset, required by loss-aware scoring
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Packed model output path
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub alq: AlqArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint or packed model, detected from its header
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Full-precision checkpoint
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Comma-separated, ascending, each in [0,1)
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,0.95")]
    pub rates: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub alq: AlqArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Packed model
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
