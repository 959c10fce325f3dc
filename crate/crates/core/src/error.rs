use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: confidence out of range: {value}")]
    ConfidenceOutOfRange { line: usize, value: f64 },

    #[error("line {line}: label out of range: {value}")]
    LabelOutOfRange { line: usize, value: f64 },

    #[error("line {line}: embedding dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("embedding has dimension {found}, partitioner expects {expected}")]
    EmbeddingDimension { expected: usize, found: usize },

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("need at least {needed} points for depth {depth}, got {got}")]
    TooFewPoints {
        depth: usize,
        needed: usize,
        got: usize,
    },

    #[error("k = {k} exceeds the number of distinct embeddings ({distinct})")]
    TooManyCentroids { k: usize, distinct: usize },

    #[error("UMD needs n >= 2B (n = {n}, B = {bins})")]
    NotEnoughForBins { n: usize, bins: usize },

    #[error("minimum points per bin must be at least 2, got {0}")]
    BinSizeTooSmall(usize),

    #[error("value {value} outside [0, 1] for {what}")]
    OutOfUnitInterval { what: &'static str, value: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("calibrator table was fit with partitioner {expected}, got {found}")]
    PartitionerMismatch { expected: String, found: String },

    #[error("bound domain violated: {0}")]
    BoundDomain(String),

    #[error("no b <= {n} achieves epsilon {target}")]
    Infeasible { n: usize, target: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported format tag {0:?}")]
    UnknownFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
