//! Argument definitions. Every subcommand except `sweep` accepts
//! `--config <json>`: a flat object keyed by the flag names (snake_case)
//! whose values fill in flags not given on the command line. For `sweep`
//! the config file is the sweep configuration itself.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "qacal", version, about = "Calibrate QA confidence scores per query-answer region")]
pub struct Cli {
    /// Log progress at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL dataset and print a summary.
    Ingest(IngestArgs),
    /// Split a dataset into tree / cal / tune / test files.
    Split(SplitArgs),
    /// Grow a partitioner on a dataset's embeddings.
    Partition(PartitionArgs),
    /// Fit a calibrator and write a bundle.
    Fit(FitArgs),
    /// Apply a bundle, adding a `calibrated` field to every record.
    Predict(PredictArgs),
    /// Compute calibration and selective-accuracy metrics.
    Evaluate(EvaluateArgs),
    /// Run the repeated-split comparison of all calibrators.
    Sweep(SweepArgs),
    /// Check conditional-guarantee coverage on synthetic data.
    Simulate(SimulateArgs),
    /// Evaluate, invert or tabulate the finite-sample bound.
    Bound(BoundArgs),
    /// Rewrite the CSV tables (and optionally markdown) from a report.json.
    ExportReport(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Umd,
    Platt,
    ScaleBin,
    Qab,
    SQab,
    HsQab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Kdtree,
    Kmeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum LogBaseArg {
    #[value(name = "e")]
    #[serde(rename = "e")]
    E,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Reject records whose embedding length differs.
    #[arg(long)]
    pub expect_dim: Option<usize>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, env = "QACAL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// tree,cal,tune,test shares.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.2, 0.6, 0.1, 0.1])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct PartitionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum, default_value_t = PartitionKind::Kdtree)]
    pub kind: PartitionKind,
    /// Seed for k-means initialisation.
    #[arg(long, env = "QACAL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub partitioner: Option<PathBuf>,
    /// Minimum points per bin (QA-binning family).
    #[arg(long)]
    pub b: Option<usize>,
    /// Bin count for umd / scale-bin (default: records / b).
    #[arg(long = "B")]
    pub bins: Option<usize>,
    #[arg(long, default_value_t = qacal_core::umd::DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long)]
    pub sigma_u2: Option<f64>,
    #[arg(long)]
    pub sigma_v2: Option<f64>,
    /// Held-out records: selects hs-qab variances and estimates the proxy misspecification.
    #[arg(long)]
    pub tune: Option<PathBuf>,
    /// Seed of the scaler / binning split.
    #[arg(long, env = "QACAL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Records to score; uses `calibrated` when every record has it, else `confidence`.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub partitioner: Option<PathBuf>,
    #[arg(long, default_value_t = qacal_core::metrics::DEFAULT_AUAC_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = qacal_core::metrics::DEFAULT_CE_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep configuration JSON; optional when `--depths` is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub b_grid: Option<Vec<usize>>,
    #[arg(long = "B-grid", value_delimiter = ',')]
    pub bins_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub calibrators: Option<Vec<String>>,
    #[arg(long)]
    pub eval_depth: Option<usize>,
    #[arg(long, value_enum)]
    pub partitioner: Option<PartitionKind>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic generator spec (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Replace the generator seed.
    #[arg(long, env = "QACAL_SEED")]
    pub seed: Option<u64>,
    /// Per-trial CSV (trial, gap, within_epsilon).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one draw of the generator as a JSONL dataset. The coverage check
    /// then runs only if `--b` and `--depth` are given.
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct BoundArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    /// Use the uniform-mass binning bound with `--B` bins.
    #[arg(long)]
    pub umd: bool,
    #[arg(long = "B")]
    pub bins: Option<usize>,
    #[arg(long, value_enum, default_value_t = LogBaseArg::E)]
    pub log_base: LogBaseArg,
    /// Print the smallest b (or, with --umd, the largest B) meeting this epsilon.
    #[arg(long)]
    pub target_eps: Option<f64>,
    /// Emit a CSV (b,N,nu,epsilon) over the grids below.
    #[arg(long)]
    pub curve: bool,
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub b_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub nu_values: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write the summary as a markdown table.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}
