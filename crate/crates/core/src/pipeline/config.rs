use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calibrators::CalibratorKind;
use crate::error::{Error, Result};
use crate::guarantees::{choose_b, choose_bins_umd};
use crate::metrics::{DEFAULT_AUAC_GRID, DEFAULT_CE_BINS};
use crate::scaler::DEFAULT_VARIANCE_GRID;
use crate::umd::DEFAULT_DELTA;

pub const MIN_BINS_PER_PARTITION: usize = 3;
pub const MAX_BINS_PER_PARTITION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionerKind {
    #[default]
    Kdtree,
    /// k-means with `k = 2^d` for each depth `d`.
    Kmeans,
}

/// Selection objective. Only AUAC on the tuning split is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Auac,
}

fn default_seeds() -> Vec<u64> {
    (0..8).collect()
}
fn default_variances() -> Vec<f64> {
    DEFAULT_VARIANCE_GRID.to_vec()
}
fn default_alpha() -> f64 {
    0.1
}
fn default_eps_targets() -> Vec<f64> {
    vec![0.1, 0.15, 0.2]
}
fn default_nu_grid() -> Vec<f64> {
    vec![0.0, 0.025, 0.05]
}
fn default_bins_eps() -> Vec<f64> {
    vec![0.05, 0.1, 0.15, 0.2]
}
fn default_fractions() -> [f64; 4] {
    [0.2, 0.6, 0.1, 0.1]
}
fn default_calibrators() -> Vec<CalibratorKind> {
    CalibratorKind::ALL.to_vec()
}
fn default_n_bins() -> usize {
    DEFAULT_CE_BINS
}
fn default_grid() -> usize {
    DEFAULT_AUAC_GRID
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_dataset() -> String {
    "dataset".into()
}

/// Sweep configuration, read from a single JSON document. Every field but
/// `depths` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub depths: Vec<usize>,
    /// Explicit `b` values; derived from the bound when absent.
    #[serde(default)]
    pub b_grid: Option<Vec<usize>>,
    /// Explicit bin counts for the partition-free baselines.
    #[serde(default, rename = "B_grid")]
    pub bins_grid: Option<Vec<usize>>,
    #[serde(default = "default_variances")]
    pub scaler_variance_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Epsilon targets inverted into `b` values, one per `nu`.
    #[serde(default = "default_eps_targets")]
    pub eps_targets: Vec<f64>,
    #[serde(default = "default_nu_grid")]
    pub nu_grid: Vec<f64>,
    #[serde(default = "default_bins_eps")]
    pub bins_eps_targets: Vec<f64>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 4],
    #[serde(default = "default_calibrators")]
    pub calibrators: Vec<CalibratorKind>,
    #[serde(default)]
    pub partitioner: PartitionerKind,
    /// Depth of the partitioner that defines groups for CE(h; beta);
    /// defaults to the largest depth.
    #[serde(default)]
    pub eval_depth: Option<usize>,
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl SweepConfig {
    pub fn new(depths: Vec<usize>) -> Self {
        serde_json::from_value(serde_json::json!({ "depths": depths })).expect("defaults are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn eval_depth(&self) -> usize {
        self.eval_depth
            .unwrap_or_else(|| self.depths.iter().copied().max().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.depths.is_empty() {
            return bad("depths must not be empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.calibrators.is_empty() {
            return bad("calibrators must not be empty");
        }
        if self.scaler_variance_grid.is_empty() || self.scaler_variance_grid.iter().any(|v| !(*v > 0.0)) {
            return bad("scaler_variance_grid must hold positive values");
        }
        if self.b_grid.as_ref().is_some_and(|g| g.is_empty() || g.iter().any(|&b| b < 2)) {
            return bad("b_grid values must be >= 2");
        }
        if self.bins_grid.as_ref().is_some_and(|g| g.is_empty() || g.contains(&0)) {
            return bad("B_grid values must be >= 1");
        }
        if self.n_bins == 0 || self.grid_size < 2 {
            return bad("n_bins must be >= 1 and grid_size >= 2");
        }
        crate::dataset::SplitSpec {
            fractions: self.fractions,
            seed: 0,
        }
        .validate()
    }

    /// `b` values to try: the explicit grid, or the smallest `b` meeting each
    /// epsilon target under each `nu`, for a calibration set of `n_cal`.
    pub fn b_values(&self, n_cal: usize) -> Vec<usize> {
        let mut out = match &self.b_grid {
            Some(g) => g.clone(),
            None => self
                .eps_targets
                .iter()
                .flat_map(|&eps| self.nu_grid.iter().map(move |&nu| (eps, nu)))
                .filter_map(|(eps, nu)| choose_b(n_cal, self.alpha, nu, eps).ok())
                .collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Bin counts for the partition-free baselines.
    pub fn bin_counts(&self, n_cal: usize) -> Vec<usize> {
        let mut out = match &self.bins_grid {
            Some(g) => g.clone(),
            None => self
                .bins_eps_targets
                .iter()
                .filter_map(|&eps| choose_bins_umd(n_cal, self.alpha, 0.0, eps).ok())
                .collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `(d, b)` pairs giving each partition between 3 and 10 bins.
    pub fn depth_b_pairs(&self, n_cal: usize) -> Vec<(usize, usize)> {
        let bs = self.b_values(n_cal);
        let mut depths = self.depths.clone();
        depths.sort_unstable();
        depths.dedup();
        depths
            .into_iter()
            .flat_map(|d| bs.iter().map(move |&b| (d, b)))
            .filter(|&(d, b)| {
                let per_part = n_cal >> d;
                let bins = per_part / b;
                (MIN_BINS_PER_PARTITION..=MAX_BINS_PER_PARTITION).contains(&bins)
            })
            .collect()
    }
}
