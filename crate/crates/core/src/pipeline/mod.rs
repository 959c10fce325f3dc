//! Calibrator registry, sweep configuration, the sweep runner and its reports.

pub mod calibrators;
pub mod config;
pub mod report;
pub mod sweep;

pub use calibrators::{
    fit_calibrator, load_bundle, save_bundle, BundleManifest, CalibratorKind, FitParams, FittedCalibrator, LoadedBundle,
};
pub use config::{Objective, PartitionerKind, SweepConfig};
pub use report::{load_report, summary_markdown, write_outputs};
pub use sweep::{build_partitioner, eval_records, run_sweep, CellFailure, MeanSd, RunResult, SummaryRow, SweepReport};
