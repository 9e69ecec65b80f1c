use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reldep::synthbench::{DEFAULT_ALPHA, DEFAULT_POWER_TRIALS};

/// Relative dependency testing with HSIC U-statistics.
///
/// JSON goes to standard output and diagnostics to standard error. Exit
/// status is 0 on success, 2 on usage or I/O errors and 3 when a
/// statistical precondition fails (too few rows, degenerate kernel).
#[derive(Debug, Parser)]
#[command(name = "reldep", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test whether the source (first file) depends more on the second
    /// file than on the third.
    Test(TestArgs),
    /// Unbiased HSIC estimate and its variance for two files.
    Hsic(HsicArgs),
    /// Power of both tests over a grid of target noise levels.
    Power(PowerArgs),
    /// Rejection rate when both targets are equally dependent on the source.
    Calibrate(CalibrateArgs),
    /// Per-trial HSIC pairs and p-values of both tests.
    Scatter(ScatterArgs),
    /// Deviation of the difference statistic from its large-sample value
    /// as the sample size grows.
    Converge(ConvergeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Dependent,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Significance level in (0, 1).
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,

    /// Random seed; all outputs are a pure function of inputs and seed.
    #[arg(long, env = "RELDEP_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Maximum number of worker threads (0 lets the runtime decide).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    /// Format of standard output.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Kernel for the source variable.
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel_x: KernelArg,
    /// Kernel for the first target.
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel_y: KernelArg,
    /// Kernel for the second target.
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel_z: KernelArg,
    /// Gaussian bandwidth for the source (default: median heuristic).
    #[arg(long)]
    pub bandwidth_x: Option<f64>,
    /// Gaussian bandwidth for the first target.
    #[arg(long)]
    pub bandwidth_y: Option<f64>,
    /// Gaussian bandwidth for the second target.
    #[arg(long)]
    pub bandwidth_z: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CsvArgs {
    /// Field delimiter of the input files (a single ASCII character).
    #[arg(long, default_value = ",")]
    pub delimiter: String,

    /// Skip the first line of every input file.
    #[arg(long)]
    pub header: bool,

    /// Zero-based columns to keep, as `start:end` (end exclusive) or a
    /// single index.
    #[arg(long)]
    pub columns: Option<String>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Source, first target and second target files. The generalized test
    /// accepts further files referenced by `--pairs`.
    #[arg(required = true, num_args = 2..)]
    pub files: Vec<PathBuf>,

    #[arg(long, value_enum, default_value_t = MethodArg::Dependent)]
    pub method: MethodArg,

    /// Weights of the generalized test, e.g. `1,-1`. Requires `--pairs`.
    #[arg(long, requires = "pairs", allow_hyphen_values = true)]
    pub weights: Option<String>,

    /// File index pairs of the generalized test, e.g. `0-1,0-2`.
    #[arg(long, requires = "weights")]
    pub pairs: Option<String>,

    /// Shuffle rows before the half split of the independent test.
    #[arg(long)]
    pub shuffle: bool,

    /// Also write the result to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub kernels: KernelArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct HsicArgs {
    pub x: PathBuf,
    pub y: PathBuf,

    /// Also write the result to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub kernels: KernelArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Noise level of the source.
    #[arg(long, default_value_t = 0.3)]
    pub gamma1: f64,

    /// Noise level of the first target.
    #[arg(long, default_value_t = 0.3)]
    pub gamma2: f64,

    /// Directory receiving `{experiment}_{m}_{seed}.csv` and `.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Rows per draw.
    #[arg(long, default_value_t = 500)]
    pub m: usize,

    /// Noise levels of the second target: `start:step:end` or a comma list.
    #[arg(long, default_value = "0.4:0.1:1.7", allow_hyphen_values = true)]
    pub gamma3: String,

    #[arg(long, default_value_t = DEFAULT_POWER_TRIALS)]
    pub trials: usize,

    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Rows per draw.
    #[arg(long, default_value_t = 500)]
    pub m: usize,

    #[arg(long, default_value_t = 300)]
    pub trials: usize,

    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    /// Rows per draw.
    #[arg(long, default_value_t = 500)]
    pub m: usize,

    /// Noise level of the second target.
    #[arg(long, default_value_t = 0.7)]
    pub gamma3: f64,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// Ascending sample sizes, comma separated (at least three).
    #[arg(long, default_value = "100,200,400,800")]
    pub sizes: String,

    /// Noise level of the second target.
    #[arg(long, default_value_t = 0.7)]
    pub gamma3: f64,

    #[arg(long, default_value_t = 200)]
    pub trials: usize,

    #[command(flatten)]
    pub synth: SynthArgs,
}
