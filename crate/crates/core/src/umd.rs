//! Uniform-mass-double-dipping histogram binning.
//!
//! Bin boundaries sit at confidence order statistics `A_b = ceil(b(n+1)/B)`,
//! and each bin predicts the mean target of the points strictly between its
//! two boundary order statistics. The boundary points themselves are not
//! averaged into either neighbouring bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tie-breaking jitter.
pub const DEFAULT_DELTA: f64 = 1e-10;

/// A fitted binning calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmdCalibrator {
    /// `B + 1` edges; the first is 0 and the last is 1.
    pub edges: Vec<f64>,
    /// Per-bin target means.
    pub means: Vec<f64>,
    /// Number of points the calibrator was fit on.
    #[serde(rename = "n_s")]
    pub n_fit: usize,
}

fn check_unit(what: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfUnitInterval { what, value: v });
    }
    Ok(())
}

/// Order-statistic boundary indices `[0, ceil(Δ), ceil(2Δ), ..., n+1]`
/// with `Δ = (n+1)/B`, computed in exact integer arithmetic.
pub fn boundary_indices(n: usize, bins: usize) -> Vec<usize> {
    (0..=bins).map(|b| (b * (n + 1)).div_ceil(bins)).collect()
}

/// Fits a calibrator on `(confidence, target)` pairs.
///
/// Ties in confidence are ordered by adding `i * delta / n` to the sort key
/// of the `i`-th input (input order wins if keys still collide). The stored
/// edges keep the raw confidence values.
pub fn fit_umd(pairs: &[(f64, f64)], bins: usize, delta: f64) -> Result<UmdCalibrator> {
    if bins < 1 {
        return Err(Error::InvalidParameter("number of bins must be >= 1".into()));
    }
    let n = pairs.len();
    if n < 2 * bins {
        return Err(Error::NotEnoughForBins { n, bins });
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    for &(h, t) in pairs {
        check_unit("confidence", h)?;
        check_unit("target", t)?;
    }

    let step = delta / n as f64;
    let keys: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(h, _))| h + i as f64 * step)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));

    let bounds = boundary_indices(n, bins);
    let mut means = Vec::with_capacity(bins);
    for w in bounds.windows(2) {
        let (l, u) = (w[0], w[1]);
        // 1-based order statistics l+1 ..= u-1 are 0-based positions l .. u-1
        let slice = &order[l..u - 1];
        let sum: f64 = slice.iter().map(|&i| pairs[i].1).sum();
        means.push(sum / slice.len() as f64);
    }

    let mut edges = Vec::with_capacity(bins + 1);
    edges.push(0.0);
    for &a in &bounds[1..bins] {
        edges.push(pairs[order[a - 1]].0);
    }
    edges.push(1.0);

    Ok(UmdCalibrator {
        edges,
        means,
        n_fit: n,
    })
}

impl UmdCalibrator {
    pub fn bins(&self) -> usize {
        self.means.len()
    }

    /// Zero-based bin for `h`: left-closed, right-open intervals, with
    /// `h = 1` falling into the last bin.
    pub fn bin_index(&self, h: f64) -> usize {
        let interior = &self.edges[1..self.bins()];
        interior.partition_point(|&e| e <= h)
    }

    pub fn apply(&self, h: f64) -> Result<f64> {
        check_unit("confidence", h)?;
        Ok(self.means[self.bin_index(h)])
    }

    /// Half-open confidence interval covered by bin `b`.
    pub fn bin_interval(&self, b: usize) -> (f64, f64) {
        (self.edges[b], self.edges[b + 1])
    }
}
