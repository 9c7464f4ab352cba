use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sa",
    version,
    about = "Surprise adequacy (LSA/DSA) for activation traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the KDE (LSA) or index the training traces (DSA) into the cache.
    Prep(PrepArgs),
    /// Score query traces.
    Calc(CalcArgs),
    /// Draw a training sample and write it as JSON.
    Sample(SampleArgs),
    /// AUC-ROC sweeps over sampling ratios and KDE bandwidths.
    Eval(EvalArgs),
    /// Time naive against optimized DSA.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Npy,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

/// Training-set options shared by prep, calc and sample.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with defaults for any of these options; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training traces (.npy or CSV).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Predicted labels of the training traces (.npy or one per line).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Trace file format; inferred from the extension by default.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// CSV inputs start with a header line.
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// scott, silverman or a fixed positive bandwidth.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub variance_threshold: Option<f64>,
    /// Fit the KDE on raw rather than standardized traces.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Options that select a subset of the training set.
#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// uniform:<s>, unsurprising:<s>, neighborfree:eps=<e> or neighborfree:s=<s>.
    #[arg(long, conflicts_with = "selection")]
    pub sampling: Option<String>,
    /// Selection JSON written by `sa sample`.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Visit neighbor-free candidates in seeded random order instead of dataset order.
    #[arg(long)]
    pub shuffle: bool,
    /// Allow non-uniform sampling together with LSA.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Cache directory.
    #[arg(long, visible_alias = "cache-dir")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalcArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, visible_alias = "cache-dir")]
    pub cache: Option<PathBuf>,
    /// Query traces.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Predicted labels of the queries (required for DSA).
    #[arg(long)]
    pub query_labels: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Score file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub output_format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Selection JSON; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lsa,
    Dsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Uniform,
    Unsurprising,
    Neighborfree,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Synthetic cluster specification (JSON); replaces the trace files.
    #[arg(long, conflicts_with_all = ["nominal", "outliers"])]
    pub synth: Option<PathBuf>,
    /// Nominal test traces.
    #[arg(long)]
    pub nominal: Option<PathBuf>,
    #[arg(long)]
    pub nominal_labels: Option<PathBuf>,
    /// Out-of-distribution test traces.
    #[arg(long)]
    pub outliers: Option<PathBuf>,
    #[arg(long)]
    pub outlier_labels: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodArg>,
    /// Sampling ratios in (0, 1], ascending. 1.0 is always added.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Fixed KDE bandwidths to sweep for LSA, ascending.
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Vec<f64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Allow non-uniform sampling together with LSA.
    #[arg(long)]
    pub force: bool,
    /// Output prefix: writes <prefix>.json, <prefix>.csv and <prefix>.dat.
    /// The CSV goes to stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Naive against optimized DSA across thread counts.
    #[arg(long)]
    pub dsa: bool,
    /// Skip the naive implementation.
    #[arg(long, requires = "dsa")]
    pub no_naive: bool,
    /// Optimized DSA time across uniform sampling ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    #[arg(short = 'N', default_value_t = 10_000)]
    pub n: usize,
    #[arg(short = 'Q', default_value_t = 10_000)]
    pub q: usize,
    #[arg(short = 'D', default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub threads: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub no_warmup: bool,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Benchmark CSV; the table is always printed.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}
