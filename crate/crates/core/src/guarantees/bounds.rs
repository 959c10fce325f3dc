//! Closed-form epsilon bounds for QA binning and plain UMD, and the inverse
//! problems used to pick `b` (points per bin) or `B` (number of bins).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logarithm used inside the bound. Hoeffding's inequality gives the natural
/// log; base 2 is kept to reproduce curves drawn with it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    #[serde(rename = "N")]
    pub n: usize,
    pub b: usize,
    pub alpha: f64,
    pub nu: f64,
}

fn check_alpha_nu(alpha: f64, nu: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BoundDomain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::BoundDomain(format!("nu must lie in [0, 1], got {nu}")));
    }
    Ok(())
}

/// `sqrt(log(2N / (b alpha)) / (2 (b - 1))) + nu`.
pub fn epsilon_bound_qa(q: &BoundQuery) -> Result<f64> {
    epsilon_bound_qa_with(q, LogBase::Natural)
}

pub fn epsilon_bound_qa_with(q: &BoundQuery, base: LogBase) -> Result<f64> {
    check_alpha_nu(q.alpha, q.nu)?;
    if q.n == 0 {
        return Err(Error::BoundDomain("N must be positive".into()));
    }
    if q.b < 2 {
        return Err(Error::BoundDomain(format!("b must be >= 2, got {}", q.b)));
    }
    let arg = 2.0 * q.n as f64 / (q.b as f64 * q.alpha);
    if arg <= 1.0 {
        return Err(Error::BoundDomain(format!("2N/(b alpha) = {arg} must exceed 1")));
    }
    Ok((base.log(arg) / (2.0 * (q.b - 1) as f64)).sqrt() + q.nu)
}

/// `sqrt(log(2B / alpha) / (2 (floor(N/B) - 1))) + nu`.
pub fn epsilon_bound_umd(n: usize, bins: usize, alpha: f64, nu: f64) -> Result<f64> {
    check_alpha_nu(alpha, nu)?;
    if bins == 0 {
        return Err(Error::BoundDomain("B must be >= 1".into()));
    }
    if n < 2 * bins {
        return Err(Error::BoundDomain(format!("need N >= 2B, got N = {n}, B = {bins}")));
    }
    let per_bin = (n / bins) as f64;
    Ok(((2.0 * bins as f64 / alpha).ln() / (2.0 * (per_bin - 1.0))).sqrt() + nu)
}

/// Smallest `b >= 2` whose bound meets `eps_target`.
pub fn choose_b(n: usize, alpha: f64, nu: f64, eps_target: f64) -> Result<usize> {
    choose_b_with(n, alpha, nu, eps_target, LogBase::Natural)
}

pub fn choose_b_with(n: usize, alpha: f64, nu: f64, eps_target: f64, base: LogBase) -> Result<usize> {
    check_alpha_nu(alpha, nu)?;
    let infeasible = || Error::Infeasible { n, target: eps_target };
    if eps_target <= nu || n < 2 {
        return Err(infeasible());
    }
    let eps = |b: usize| epsilon_bound_qa_with(&BoundQuery { n, b, alpha, nu }, base);
    if eps(n)? > eps_target {
        return Err(infeasible());
    }
    if eps(2)? <= eps_target {
        return Ok(2);
    }
    // eps(lo) > target >= eps(hi)
    let (mut lo, mut hi) = (2, n);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps(mid)? <= eps_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Largest bin count `B` whose UMD bound meets `eps_target`.
pub fn choose_bins_umd(n: usize, alpha: f64, nu: f64, eps_target: f64) -> Result<usize> {
    check_alpha_nu(alpha, nu)?;
    let infeasible = || Error::Infeasible { n, target: eps_target };
    if n < 4 {
        return Err(infeasible());
    }
    let eps = |bins: usize| epsilon_bound_umd(n, bins, alpha, nu);
    if eps(1)? > eps_target {
        return Err(infeasible());
    }
    let max_bins = n / 2;
    if eps(max_bins)? <= eps_target {
        return Ok(max_bins);
    }
    // eps(lo) <= target < eps(hi)
    let (mut lo, mut hi) = (1, max_bins);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps(mid)? <= eps_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One row of an epsilon-versus-b curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub b: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub nu: f64,
    pub epsilon: f64,
}

/// Bound values over the grid `ns x nus x bs`, skipping points outside the
/// domain (e.g. `b > N`).
pub fn bound_curve(ns: &[usize], bs: &[usize], alpha: f64, nus: &[f64], base: LogBase) -> Result<Vec<CurvePoint>> {
    check_alpha_nu(alpha, 0.0)?;
    let mut rows = Vec::new();
    for &n in ns {
        for &nu in nus {
            for &b in bs {
                if b > n {
                    continue;
                }
                let q = BoundQuery { n, b, alpha, nu };
                if let Ok(epsilon) = epsilon_bound_qa_with(&q, base) {
                    rows.push(CurvePoint { b, n, nu, epsilon });
                }
            }
        }
    }
    Ok(rows)
}
