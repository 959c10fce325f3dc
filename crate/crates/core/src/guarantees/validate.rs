//! Monte-Carlo check of the conditional calibration guarantee.
//!
//! Every trial draws a fresh calibration set, fits QA binning, and compares
//! each fitted bin value with the true conditional accuracy of that
//! (partition, bin) cell. The true value is an exact ratio of integrals over
//! the bin's confidence interval, evaluated by adaptive quadrature, so no
//! holdout noise enters the comparison.

use rayon::prelude::*;
use serde::Serialize;

use super::bounds::{epsilon_bound_qa, BoundQuery};
use super::synthetic::{sample_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::partitioner::{build_kdtree, DimOrder, Partitioner};
use crate::qa_binning::fit_qa_binning;
use crate::umd::DEFAULT_DELTA;

pub const QUADRATURE_TOL: f64 = 1e-6;
const TREE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E[p(h, s) | lo <= h < hi]` under the generator's confidence law.
pub fn true_bin_accuracy(spec: &SyntheticSpec, s: usize, lo: f64, hi: f64) -> f64 {
    let law = spec.confidence_law;
    if hi - lo < 1e-12 {
        return spec.accuracy(0.5 * (lo + hi), s);
    }
    // Scale the tolerance with the interval so narrow bins keep relative accuracy.
    let tol = QUADRATURE_TOL * (hi - lo);
    let mass = integrate(|h| law.unnormalized_density(h), lo, hi, tol);
    let weighted = integrate(|h| law.unnormalized_density(h) * spec.accuracy(h, s), lo, hi, tol);
    weighted / mass
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub trials: usize,
    pub n: usize,
    pub b: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// Fraction of trials whose every cell gap is within `epsilon`.
    pub coverage: f64,
    pub worst_gap: f64,
    pub trial_gaps: Vec<f64>,
}

/// Runs `trials` independent calibration draws. The partitioner is a
/// depth-`part_depth` kd-tree grown once on a separate draw; leaves are
/// matched to generating clusters by majority vote. Labels used for fitting
/// follow the generator (including any `label_shift`), and the reported epsilon
/// uses `nu = label_shift`.
pub fn validate_conditional_guarantee(
    spec: &SyntheticSpec,
    part_depth: usize,
    b: usize,
    alpha: f64,
    trials: usize,
) -> Result<ValidationReport> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let n = spec.total_points();
    let epsilon = epsilon_bound_qa(&BoundQuery {
        n,
        b,
        alpha,
        nu: spec.label_shift,
    })?;

    let tree_draw = sample_synthetic(&spec.with_seed(spec.seed ^ TREE_SEED_SALT))?;
    let tree = build_kdtree(&tree_draw.dataset.embeddings(), part_depth, DimOrder::Cycle)?;
    let mut votes = vec![vec![0usize; spec.n_partitions]; tree.n_leaves()];
    for (r, &c) in tree_draw.dataset.records.iter().zip(&tree_draw.clusters) {
        if let Some(leaf) = tree.assign(&r.embedding)?.partition() {
            votes[leaf][c] += 1;
        }
    }
    let cluster_of_leaf: Vec<usize> = votes
        .iter()
        .map(|v| (0..v.len()).max_by_key(|&c| (v[c], std::cmp::Reverse(c))).unwrap_or(0))
        .collect();
    let part = Partitioner::from(tree);

    let trial_gaps = (0..trials)
        .into_par_iter()
        .map(|t| {
            let draw = sample_synthetic(&spec.with_seed(spec.seed.wrapping_add(1 + t as u64)))?;
            let data = draw
                .dataset
                .records
                .iter()
                .map(|r| (r.embedding.as_slice(), r.confidence, r.label));
            let table = fit_qa_binning(data, &part, b, DEFAULT_DELTA)?;
            let mut worst = 0.0f64;
            for (&leaf, cal) in &table.per_partition {
                let cluster = cluster_of_leaf[leaf];
                for (j, &mean) in cal.means.iter().enumerate() {
                    let (lo, hi) = cal.bin_interval(j);
                    worst = worst.max((mean - true_bin_accuracy(spec, cluster, lo, hi)).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;

    let passed = trial_gaps.iter().filter(|&&g| g <= epsilon).count();
    Ok(ValidationReport {
        trials,
        n,
        b,
        alpha,
        epsilon,
        coverage: passed as f64 / trials as f64,
        worst_gap: trial_gaps.iter().copied().fold(0.0, f64::max),
        trial_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::synthetic::ConfidenceLaw;

    #[test]
    fn simpson_polynomials_and_transcendentals() {
        assert!((integrate(|x| x * x, 0.0, 1.0, 1e-10) - 1.0 / 3.0).abs() < 1e-12);
        assert!((integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-10) - 2.0).abs() < 1e-9);
        assert!((integrate(f64::exp, -1.0, 2.0, 1e-10) - (2f64.exp() - (-1f64).exp())).abs() < 1e-9);
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-6), 0.0);
    }

    #[test]
    fn calibrated_uniform_bin_accuracy_is_midpoint() {
        let spec = SyntheticSpec::hypercube(1, 10, vec![(0.0, 1.0)], ConfidenceLaw::Uniform, 0).unwrap();
        for (lo, hi) in [(0.0, 0.2), (0.3, 0.35), (0.6, 1.0)] {
            assert!((true_bin_accuracy(&spec, 0, lo, hi) - 0.5 * (lo + hi)).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_weighting_shifts_mean() {
        // E[h | h in [0,1]] under Beta(2, 5) is 2/7.
        let spec =
            SyntheticSpec::hypercube(1, 10, vec![(0.0, 1.0)], ConfidenceLaw::Beta { a: 2.0, b: 5.0 }, 0).unwrap();
        assert!((true_bin_accuracy(&spec, 0, 0.0, 1.0) - 2.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn one_bin_per_partition_gap_shrinks() {
        let gap_at = |pts: usize| {
            let spec = SyntheticSpec::hypercube(2, pts, vec![(0.3, 1.5), (-0.2, 0.7)], ConfidenceLaw::Uniform, 5).unwrap();
            let r = validate_conditional_guarantee(&spec, 1, pts / 2, 0.1, 60).unwrap();
            r.trial_gaps.iter().sum::<f64>() / r.trials as f64
        };
        let (small, large) = (gap_at(200), gap_at(3200));
        // Mean absolute deviation scales as n^-1/2: a 16x larger sample
        // should shrink it about 4x.
        assert!(small / large > 2.5, "{small} vs {large}");
    }

    #[test]
    fn report_is_deterministic() {
        let spec = SyntheticSpec::hypercube(2, 300, vec![(0.0, 2.0), (0.5, 0.5)], ConfidenceLaw::Uniform, 9).unwrap();
        let a = validate_conditional_guarantee(&spec, 1, 50, 0.1, 8).unwrap();
        let b = validate_conditional_guarantee(&spec, 1, 50, 0.1, 8).unwrap();
        assert_eq!(a.trial_gaps, b.trial_gaps);
    }
}
