//! Calibration of question-answering confidences with partition-aware
//! histogram binning and hierarchical logistic scaling.

pub mod dataset;
pub mod error;
pub mod guarantees;
pub mod metrics;
pub mod partitioner;
pub mod pipeline;
pub mod qa_binning;
pub mod scaler;
pub mod scaling;
pub mod umd;

pub use dataset::{CalibrationRecord, Dataset, LabelKind, SplitSpec, Splits};
pub use error::{Error, Result};
pub use partitioner::{Assignment, Partitioner};
pub use qa_binning::{fit_qa_binning, BinningPoint, CalibratorTable};
pub use scaler::{fit_scaler, HierScalerModel, ScalerMode, ScalerOptions, ScalerSample};
pub use umd::{fit_umd, UmdCalibrator};
