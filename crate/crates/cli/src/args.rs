use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "usts", version, about = "Unified traffic forecasting and imputation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic telecom-style dataset and a matching config.
    Synth(SynthArgs),
    /// Parse, cluster, fill and normalise raw records into a binary cache.
    Prepare(PrepareArgs),
    /// Train a model and score it on the test split.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Score a checkpoint on another dataset without any update.
    Zeroshot(ZeroshotArgs),
    /// Train ablated variants next to the full model.
    Ablate(AblateArgs),
    /// Export attention maps, features, the adjacency or the bias as CSV.
    Dump(DumpArgs),
}

/// Config file plus overrides shared by every config-driven command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=1e-3`. Repeatable; applied
    /// after the file and `USTS_<SECTION>_<KEY>` variables.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Predict,
    Impute,
}

impl From<TaskArg> for usts::Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Predict => usts::Task::Predict,
            TaskArg::Impute => usts::Task::Impute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for usts::dataset::Segment {
    fn from(s: SplitArg) -> Self {
        use usts::dataset::Segment;
        match s {
            SplitArg::Train => Segment::Train,
            SplitArg::Val => Segment::Val,
            SplitArg::Test => Segment::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Number of steps.
    #[arg(long, default_value_t = 24 * 7 * 6)]
    pub len: usize,
    /// Steps per day.
    #[arg(long, default_value_t = 24)]
    pub period: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of dropping each node-step from the file.
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Raw tab-separated record files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub grid_width: Option<u64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Binary cache written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Predict)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the `config.toml` saved next to the checkpoint.
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub source_ckpt: PathBuf,
    #[arg(long)]
    pub target_data: PathBuf,
    /// Source cache; required when `data.reuse_source_medians` is set.
    #[arg(long)]
    pub source_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TaskArg::Predict)]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WhichArg {
    Ste,
    Gs,
    Ge,
    /// The full model and every ablation.
    All,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum, required = true, num_args = 1..)]
    pub which: Vec<WhichArg>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds per variant, counting up from `train.seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpWhat {
    /// Head-averaged attention `L×L` per block for one test window.
    Attention,
    /// First-block hidden states over the test split with hour-of-week labels.
    Features,
    /// The functional node adjacency.
    Adjacency,
    /// The attention bias `L×L` for one test window.
    Bias,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[arg(long, value_enum)]
    pub what: DumpWhat,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Needed for every dump except the adjacency.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test window index for attention and bias dumps.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}
