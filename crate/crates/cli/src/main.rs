//! `stream-ot`: streaming sliced Wasserstein from the command line.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "stream-ot",
    version,
    about = "Streaming sliced Wasserstein distances over KLL sketches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a sketch of a one-column stream and query it.
    Sketch(SketchArgs),
    /// Stream-SW between two point files.
    Dist(DistArgs),
    /// Approximation-error sweep on synthetic pairs.
    Bench(BenchArgs),
    /// Gradient flow of a source cloud toward a streamed target.
    Flow(FlowArgs),
    /// Change-point detection on a point stream.
    Detect(DetectArgs),
    /// Stream-SW distance matrix over a directory of point clouds.
    Pairwise(PairwiseArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("query").required(true).args(["query_q", "query_cdf", "dump"])))]
pub struct SketchArgs {
    #[arg(long, default_value_t = 200)]
    pub k: u32,
    /// One-column CSV or SOTP file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the quantile at level q in (0, 1].
    #[arg(long)]
    pub query_q: Option<f64>,
    /// Print the CDF at y.
    #[arg(long)]
    pub query_cdf: Option<f64>,
    /// Print the stored support as `value,weight` rows.
    #[arg(long)]
    pub dump: bool,
    /// Write the result to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save the sketch in its binary format.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DistArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Number of projections.
    #[arg(long = "L", default_value_t = 100)]
    pub projections: usize,
    #[arg(long, default_value_t = 200)]
    pub k1: u32,
    #[arg(long, default_value_t = 200)]
    pub k2: u32,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Keep `a` exactly and sketch only `b` (with k2).
    #[arg(long)]
    pub one_sided: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write 0 in the `seconds` column so output is reproducible bit for bit.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    K,
    N,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    #[arg(long = "L", default_value_t = 1000)]
    pub projections: usize,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Base seed; cell seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweep values for `--sweep k` (default 2,5,10,20,50,100,200,500,1000).
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<u32>>,
    /// Sweep values for `--sweep n` (default 500,2000,5000,10000,20000,50000).
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Sample size held fixed in the k sweep.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Sketch size held fixed in the n sweep.
    #[arg(long, default_value_t = 100)]
    pub k: u32,
    /// Refuse sweep points whose estimated peak memory exceeds this.
    #[arg(long, default_value_t = 4096)]
    pub max_memory_mb: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArg {
    StreamSw,
    FullSw,
    RandomSampling,
}

#[derive(Debug, Args, Serialize)]
pub struct FlowArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long = "L", default_value_t = 100)]
    pub projections: usize,
    #[arg(long, default_value_t = 100)]
    pub k: u32,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.001)]
    pub step_size: f64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BaselineArg::StreamSw)]
    pub baseline: BaselineArg,
    /// Use a fresh random subset of this many projections at every step.
    #[arg(long)]
    pub resample: Option<usize>,
    /// Add the exact squared W2 cost against the full target at checkpoints.
    /// The target is then also loaded into memory, for scoring only.
    #[arg(long)]
    pub score: bool,
    /// Trace CSV `step,loss,w2,seconds`.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for point snapshots at every checkpoint.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Final points as CSV.
    #[arg(long = "final")]
    pub final_points: Option<PathBuf>,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    StreamSw,
    SlidingWindow,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "L", default_value_t = 100)]
    pub projections: usize,
    #[arg(long, default_value_t = 100)]
    pub k: u32,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 300)]
    pub calibration_end: usize,
    #[arg(long, default_value_t = 100)]
    pub subset: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::StreamSw)]
    pub method: MethodArg,
    /// CSV `t,statistic,threshold,triggered` of every evaluation.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PairwiseArgs {
    /// Directory of `.csv` / `.sotp` point clouds, taken in name order.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long = "L", default_value_t = 100)]
    pub projections: usize,
    #[arg(long, default_value_t = 200)]
    pub k: u32,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STREAM_OT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t >= 1).ok_or_else(|| {
        CliError::Usage(format!(
            "STREAM_OT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Sketch(a) => commands::sketch(a),
        Command::Dist(a) => commands::dist(a),
        Command::Bench(a) => commands::bench(a),
        Command::Flow(a) => commands::flow(a),
        Command::Detect(a) => commands::detect(a),
        Command::Pairwise(a) => commands::pairwise(a),
    });
    if let Err(e) = result {
        eprintln!("stream-ot: {e}");
        if e.exit_code() == EXIT_USAGE {
            eprintln!("run `stream-ot --help` for usage");
        }
        std::process::exit(e.exit_code());
    }
}
