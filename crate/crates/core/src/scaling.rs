//! Scaling followed by QA binning.
//!
//! The calibration set is shuffled and halved. A logistic scaler (pooled or
//! hierarchical) is fit on the first half; its outputs on the second half
//! replace the labels as fractional targets for QA binning. Only the binned
//! table is used at prediction time.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::partitioner::{Assignment, Partitioner};
use crate::qa_binning::{fit_table, BinningPoint, CalibratorTable};
use crate::scaler::{fit_scaler, FitStatus, HierScalerModel, ScalerMode, ScalerOptions, ScalerSample};
use crate::umd::DEFAULT_DELTA;

/// Bins used when estimating the proxy misspecification on held-out data.
pub const MISSPECIFICATION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingQabConfig {
    /// Share of the calibration set used to fit the scaler.
    pub split_fraction: f64,
    pub b: usize,
    pub delta: f64,
    pub scaler_mode: ScalerMode,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub seed: u64,
}

impl ScalingQabConfig {
    pub fn new(b: usize, scaler_mode: ScalerMode, seed: u64) -> Self {
        Self {
            split_fraction: 0.5,
            b,
            delta: DEFAULT_DELTA,
            scaler_mode,
            sigma_u2: 1.0,
            sigma_v2: 1.0,
            seed,
        }
    }

    pub fn scaler_options(&self) -> ScalerOptions {
        ScalerOptions {
            sigma_u2: self.sigma_u2,
            sigma_v2: self.sigma_v2,
            ..ScalerOptions::new(self.scaler_mode)
        }
    }
}

/// Fitted artifacts; `scaler_status` reports whether the scaler converged.
#[derive(Debug, Clone)]
pub struct ScalingQabFit {
    pub table: CalibratorTable,
    pub scaler: HierScalerModel,
    pub scaler_status: FitStatus,
}

/// Seeded shuffle-and-split of record indices into `(first, second)`.
pub fn halve_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * n as f64).floor() as usize;
    let second = idx.split_off(cut);
    Ok((idx, second))
}

pub fn fit_scaling_qa_binning(cal: &Dataset, part: &Partitioner, cfg: &ScalingQabConfig) -> Result<ScalingQabFit> {
    let assigned = cal
        .records
        .iter()
        .map(|r| part.assign(&r.embedding))
        .collect::<Result<Vec<_>>>()?;
    let (first, second) = halve_indices(cal.len(), cfg.split_fraction, cfg.seed)?;
    if first.len() < 2 || second.len() < cfg.b {
        return Err(Error::InvalidParameter(format!(
            "calibration split too small: {} records for the scaler, {} for binning with b = {}",
            first.len(),
            second.len(),
            cfg.b
        )));
    }
    let samples: Vec<ScalerSample> = first
        .iter()
        .map(|&i| ScalerSample {
            confidence: cal.records[i].confidence,
            partition: assigned[i],
            target: cal.records[i].label,
        })
        .collect();
    let fit = fit_scaler(&samples, &cfg.scaler_options())?;
    let points: Vec<BinningPoint> = second
        .iter()
        .map(|&i| {
            let h = cal.records[i].confidence;
            BinningPoint {
                partition: assigned[i],
                confidence: h,
                target: fit.model.apply(h, assigned[i]),
            }
        })
        .collect();
    let table = fit_table(&points, cfg.b, cfg.delta, part.fingerprint())?;
    Ok(ScalingQabFit {
        table,
        scaler: fit.model,
        scaler_status: fit.status,
    })
}

/// Largest gap between mean proxy target and mean label over equal-mass
/// confidence bins of a held-out set: an empirical estimate of the
/// misspecification `nu`.
pub fn estimate_misspecification(
    scaler: &HierScalerModel,
    holdout: &[(f64, Assignment, f64)],
    n_bins: usize,
) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be >= 1".into()));
    }
    let mut rows: Vec<(f64, f64, f64)> = holdout
        .iter()
        .map(|&(h, s, y)| (h, scaler.apply(h, s), y))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.total_cmp(&b.2)).then(a.1.total_cmp(&b.1)));
    let n = rows.len();
    let mut worst = 0.0f64;
    for k in 0..n_bins {
        let chunk = &rows[k * n / n_bins..(k + 1) * n / n_bins];
        if chunk.is_empty() {
            continue;
        }
        let m = chunk.len() as f64;
        let proxy = chunk.iter().map(|r| r.1).sum::<f64>() / m;
        let label = chunk.iter().map(|r| r.2).sum::<f64>() / m;
        worst = worst.max((proxy - label).abs());
    }
    Ok(worst)
}
