//! Logistic scaling of confidences with optional per-partition random effects.
//!
//! The hierarchical model is
//!
//! ```text
//! P(Y = 1 | h, s) = logistic(b0 + u_s + (b1 + v_s) * h)
//! ```
//!
//! with Gaussian priors `u_s ~ N(0, sigma_u2)` and `v_s ~ N(0, sigma_v2)`.
//! Fitting is MAP: damped Newton ascent on the penalized log-likelihood with
//! fixed prior variances. Fractional targets enter the Bernoulli likelihood
//! as weights, so the same fitter handles proxy labels.
//!
//! `Pooled` drops the random effects (one shared curve). `Platt` is the same
//! model used as a stand-alone baseline calibrator rather than as the scaling
//! stage of scaling-binning. Both add a weak ridge on the fixed effects so
//! separable data still yields finite coefficients.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::Assignment;

pub const SCALER_FORMAT: &str = "scaler.v1";
pub const FIXED_EFFECT_RIDGE: f64 = 1e-6;
pub const DEFAULT_VARIANCE_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerMode {
    Hierarchical,
    Pooled,
    Platt,
}

impl ScalerMode {
    fn has_effects(self) -> bool {
        self == ScalerMode::Hierarchical
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerSample {
    pub confidence: f64,
    pub partition: Assignment,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerOptions {
    pub mode: ScalerMode,
    /// Prior variance of the random intercepts; `INFINITY` disables the penalty.
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub max_iter: usize,
    /// Convergence threshold on the gradient infinity-norm.
    pub tol: f64,
}

impl ScalerOptions {
    pub fn new(mode: ScalerMode) -> Self {
        Self {
            mode,
            sigma_u2: 1.0,
            sigma_v2: 1.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }

    pub fn hierarchical(sigma_u2: f64, sigma_v2: f64) -> Self {
        Self {
            sigma_u2,
            sigma_v2,
            ..Self::new(ScalerMode::Hierarchical)
        }
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A fitted scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierScalerModel {
    pub format: String,
    pub mode: ScalerMode,
    pub b0: f64,
    pub b1: f64,
    #[serde(with = "finite_or_null")]
    pub sigma_u2: f64,
    #[serde(with = "finite_or_null")]
    pub sigma_v2: f64,
    /// Random effects `[u_s, v_s]` for every partition seen while fitting.
    pub effects: BTreeMap<usize, [f64; 2]>,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl HierScalerModel {
    /// Scaled probability. Unknown partitions and out-of-bounds points get
    /// zero random effects.
    pub fn apply(&self, h: f64, partition: Assignment) -> f64 {
        let [u, v] = partition
            .partition()
            .and_then(|s| self.effects.get(&s).copied())
            .unwrap_or([0.0, 0.0]);
        logistic(self.b0 + u + (self.b1 + v) * h)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: HierScalerModel = serde_json::from_str(text)?;
        if m.format != SCALER_FORMAT {
            return Err(Error::UnknownFormat(m.format));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Penalized log-likelihood over a fixed sample, as a function of the flat
/// parameter vector `[b0, b1, u_0.., v_0..]` (one `u`, `v` per observed
/// partition, in ascending partition order).
pub struct ScalerObjective<'a> {
    samples: &'a [ScalerSample],
    slot: Vec<Option<usize>>,
    groups: Vec<usize>,
    prec_u: f64,
    prec_v: f64,
    ridge: f64,
}

impl<'a> ScalerObjective<'a> {
    pub fn new(samples: &'a [ScalerSample], opts: &ScalerOptions) -> Self {
        let groups: Vec<usize> = if opts.mode.has_effects() {
            let mut g: Vec<usize> = samples.iter().filter_map(|s| s.partition.partition()).collect();
            g.sort_unstable();
            g.dedup();
            g
        } else {
            Vec::new()
        };
        let slot = samples
            .iter()
            .map(|s| {
                s.partition
                    .partition()
                    .and_then(|p| groups.binary_search(&p).ok())
            })
            .collect();
        let (prec_u, prec_v, ridge) = if opts.mode.has_effects() {
            (1.0 / opts.sigma_u2, 1.0 / opts.sigma_v2, 0.0)
        } else {
            (0.0, 0.0, FIXED_EFFECT_RIDGE)
        };
        Self {
            samples,
            slot,
            groups,
            prec_u,
            prec_v,
            ridge,
        }
    }

    pub fn n_params(&self) -> usize {
        2 + 2 * self.groups.len()
    }

    fn linear(&self, theta: &[f64], i: usize) -> f64 {
        let h = self.samples[i].confidence;
        let mut eta = theta[0] + theta[1] * h;
        if let Some(k) = self.slot[i] {
            let s = self.groups.len();
            eta += theta[2 + k] + theta[2 + s + k] * h;
        }
        eta
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let s = self.groups.len();
        let uu: f64 = theta[2..2 + s].iter().map(|x| x * x).sum();
        let vv: f64 = theta[2 + s..].iter().map(|x| x * x).sum();
        0.5 * (self.prec_u * uu + self.prec_v * vv + self.ridge * (theta[0] * theta[0] + theta[1] * theta[1]))
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let ll: f64 = (0..self.samples.len())
            .map(|i| {
                let eta = self.linear(theta, i);
                self.samples[i].target * eta - softplus(eta)
            })
            .sum();
        ll - self.penalty(theta)
    }

    fn features(&self, i: usize) -> ([usize; 4], [f64; 4], usize) {
        let h = self.samples[i].confidence;
        match self.slot[i] {
            Some(k) => {
                let s = self.groups.len();
                ([0, 1, 2 + k, 2 + s + k], [1.0, h, 1.0, h], 4)
            }
            None => ([0, 1, 0, 0], [1.0, h, 0.0, 0.0], 2),
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let s = self.groups.len();
        let mut g = vec![0.0; self.n_params()];
        for i in 0..self.samples.len() {
            let r = self.samples[i].target - logistic(self.linear(theta, i));
            let (idx, x, m) = self.features(i);
            for j in 0..m {
                g[idx[j]] += r * x[j];
            }
        }
        g[0] -= self.ridge * theta[0];
        g[1] -= self.ridge * theta[1];
        for k in 0..s {
            g[2 + k] -= self.prec_u * theta[2 + k];
            g[2 + s + k] -= self.prec_v * theta[2 + s + k];
        }
        g
    }

    /// Hessian of the objective (negative semi-definite).
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.n_params();
        let s = self.groups.len();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..self.samples.len() {
            let mu = logistic(self.linear(theta, i));
            let w = mu * (1.0 - mu);
            let (idx, x, m) = self.features(i);
            for a in 0..m {
                for b in 0..m {
                    h[(idx[a], idx[b])] -= w * x[a] * x[b];
                }
            }
        }
        h[(0, 0)] -= self.ridge;
        h[(1, 1)] -= self.ridge;
        for k in 0..s {
            h[(2 + k, 2 + k)] -= self.prec_u;
            h[(2 + s + k, 2 + s + k)] -= self.prec_v;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// `max_iter` reached before the gradient tolerance.
    MaxIterations,
    /// No step along the Newton direction improved the objective.
    Stalled,
}

/// Fitted model plus optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct ScalerFit {
    pub model: HierScalerModel,
    pub status: FitStatus,
    pub iterations: usize,
    /// Objective after the start point and after every accepted step;
    /// non-decreasing up to rounding.
    pub objective_trace: Vec<f64>,
}

fn newton_direction(neg_hessian: DMatrix<f64>, grad: &[f64]) -> Option<DVector<f64>> {
    let g = DVector::from_column_slice(grad);
    if let Some(ch) = neg_hessian.clone().cholesky() {
        return Some(ch.solve(&g));
    }
    // Singular or indefinite curvature: add a growing multiple of the identity.
    let scale = neg_hessian.diagonal().iter().fold(1.0f64, |m, d| m.max(d.abs()));
    let mut mu = 1e-12 * scale;
    for _ in 0..30 {
        let mut a = neg_hessian.clone();
        for d in 0..a.nrows() {
            a[(d, d)] += mu;
        }
        if let Some(ch) = a.cholesky() {
            return Some(ch.solve(&g));
        }
        mu *= 10.0;
    }
    None
}

fn validate(samples: &[ScalerSample], opts: &ScalerOptions) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "scaler needs at least 2 records, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !s.confidence.is_finite() || !s.target.is_finite() {
            return Err(Error::NonFinite("scaler input"));
        }
        if !(0.0..=1.0).contains(&s.confidence) {
            return Err(Error::OutOfUnitInterval {
                what: "confidence",
                value: s.confidence,
            });
        }
        if !(0.0..=1.0).contains(&s.target) {
            return Err(Error::OutOfUnitInterval {
                what: "target",
                value: s.target,
            });
        }
    }
    if opts.mode.has_effects()
        && !(opts.sigma_u2 > 0.0 && opts.sigma_v2 > 0.0)
    {
        return Err(Error::InvalidParameter("prior variances must be positive".into()));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    Ok(())
}

pub fn fit_scaler(samples: &[ScalerSample], opts: &ScalerOptions) -> Result<ScalerFit> {
    validate(samples, opts)?;
    let obj = ScalerObjective::new(samples, opts);
    let mut theta = vec![0.0; obj.n_params()];
    let mut value = obj.value(&theta);
    let mut trace = vec![value];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let grad = obj.gradient(&theta);
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= opts.tol {
            status = FitStatus::Converged;
            break;
        }
        let Some(dir) = newton_direction(-obj.hessian(&theta), &grad) else {
            status = FitStatus::Stalled;
            break;
        };
        // Near the optimum the predicted gain drops below the resolution of
        // the objective, so comparisons would only see rounding noise. The
        // full Newton step is taken there.
        let predicted: f64 = grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum();
        let polish = 0.5 * predicted <= 1e-12 * value.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        if polish {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + d).collect();
            let v = obj.value(&cand);
            if v.is_finite() {
                accepted = Some((cand, v));
            }
        }
        for _ in 0..40 {
            if accepted.is_some() {
                break;
            }
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let v = obj.value(&cand);
            if v.is_finite() && v >= value {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            status = FitStatus::Stalled;
            break;
        };
        theta = cand;
        value = v;
        trace.push(v);
        iterations += 1;
    }
    if status == FitStatus::MaxIterations {
        let grad = obj.gradient(&theta);
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= opts.tol {
            status = FitStatus::Converged;
        } else {
            log::warn!("scaler did not converge in {} iterations", opts.max_iter);
        }
    }

    let s = obj.groups.len();
    let effects = obj
        .groups
        .iter()
        .enumerate()
        .map(|(k, &g)| (g, [theta[2 + k], theta[2 + s + k]]))
        .collect();
    let (sigma_u2, sigma_v2) = if opts.mode.has_effects() {
        (opts.sigma_u2, opts.sigma_v2)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(ScalerFit {
        model: HierScalerModel {
            format: SCALER_FORMAT.to_string(),
            mode: opts.mode,
            b0: theta[0],
            b1: theta[1],
            sigma_u2,
            sigma_v2,
            effects,
        },
        status,
        iterations,
        objective_trace: trace,
    })
}

/// Bernoulli log-likelihood of `samples` under a fitted model.
pub fn log_likelihood(model: &HierScalerModel, samples: &[ScalerSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let p = model.apply(s.confidence, s.partition).clamp(1e-15, 1.0 - 1e-15);
            s.target * p.ln() + (1.0 - s.target) * (1.0 - p).ln()
        })
        .sum()
}

/// Picks `(sigma_u2, sigma_v2)` from `grid x grid` by held-out
/// log-likelihood. Pairs are scanned in ascending order and only a strictly
/// better score replaces the incumbent, so ties favour more pooling.
pub fn select_prior_variance(
    train: &[ScalerSample],
    holdout: &[ScalerSample],
    grid: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty variance grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<((f64, f64), f64)> = None;
    for &su in &sorted {
        for &sv in &sorted {
            let opts = ScalerOptions {
                max_iter,
                tol,
                ..ScalerOptions::hierarchical(su, sv)
            };
            let fit = fit_scaler(train, &opts)?;
            let ll = log_likelihood(&fit.model, holdout);
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some(((su, sv), ll));
            }
        }
    }
    Ok(best.expect("grid is non-empty").0)
}
