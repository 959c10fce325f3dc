//! Calibration and selective-prediction metrics.
//!
//! Calibration errors group records by exact confidence value when scores are
//! discrete (at most [`DISCRETE_LIMIT`] distinct values, as produced by binning
//! calibrators) and by equal-mass confidence intervals otherwise. Records are
//! sorted by `(confidence, label)` before grouping, which makes every metric
//! independent of input order down to the last bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::Assignment;

pub const DISCRETE_LIMIT: usize = 50;
pub const DEFAULT_CE_BINS: usize = 10;
pub const DEFAULT_AUAC_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub partition: Assignment,
    pub confidence: f64,
    pub label: f64,
}

impl EvalRecord {
    pub fn new(partition: Assignment, confidence: f64, label: f64) -> Self {
        Self {
            partition,
            confidence,
            label,
        }
    }
}

/// How confidences were grouped for a calibration-error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grouping {
    ExactValues { groups: usize },
    EqualMass { bins: usize },
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Grouping::ExactValues { groups } => write!(f, "exact values ({groups} groups)"),
            Grouping::EqualMass { bins } => write!(f, "{bins} equal-mass bins"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Group {
    n: usize,
    conf_sum: f64,
    label_sum: f64,
}

impl Group {
    fn gap(&self) -> f64 {
        (self.label_sum / self.n as f64 - self.conf_sum / self.n as f64).abs()
    }
}

fn check(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in records {
        if !r.confidence.is_finite() || !(0.0..=1.0).contains(&r.confidence) {
            return Err(Error::OutOfUnitInterval {
                what: "confidence",
                value: r.confidence,
            });
        }
        if r.label != 0.0 && r.label != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "evaluation labels must be 0 or 1, got {}",
                r.label
            )));
        }
    }
    Ok(())
}

fn sorted_pairs<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = records.into_iter().map(|r| (r.confidence, r.label)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs
}

fn group_sorted(pairs: &[(f64, f64)], n_bins: usize) -> (Vec<Group>, Grouping) {
    let mut distinct = pairs.len().min(1);
    for w in pairs.windows(2) {
        if w[0].0 != w[1].0 {
            distinct += 1;
        }
    }
    let fold = |chunk: &[(f64, f64)]| Group {
        n: chunk.len(),
        conf_sum: chunk.iter().map(|p| p.0).sum(),
        label_sum: chunk.iter().map(|p| p.1).sum(),
    };
    if distinct <= DISCRETE_LIMIT {
        let groups: Vec<Group> = pairs.chunk_by(|a, b| a.0 == b.0).map(fold).collect();
        let g = groups.len();
        (groups, Grouping::ExactValues { groups: g })
    } else {
        let n = pairs.len();
        let groups = (0..n_bins)
            .map(|k| (k * n / n_bins, (k + 1) * n / n_bins))
            .filter(|(lo, hi)| hi > lo)
            .map(|(lo, hi)| fold(&pairs[lo..hi]))
            .collect();
        (groups, Grouping::EqualMass { bins: n_bins })
    }
}

fn weighted_gap(groups: &[Group]) -> f64 {
    let n: usize = groups.iter().map(|g| g.n).sum();
    groups.iter().map(|g| g.n as f64 / n as f64 * g.gap()).sum()
}

fn max_gap(groups: &[Group]) -> f64 {
    groups.iter().map(Group::gap).fold(0.0, f64::max)
}

fn check_bins(n_bins: usize) -> Result<()> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be >= 1".into()));
    }
    Ok(())
}

fn by_partition(records: &[EvalRecord]) -> BTreeMap<Assignment, Vec<(f64, f64)>> {
    let mut parts: BTreeMap<Assignment, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        parts.entry(r.partition).or_default().push(r);
    }
    parts.into_iter().map(|(k, v)| (k, sorted_pairs(v))).collect()
}

/// Expected calibration error, ignoring partitions.
pub fn estimate_ce(records: &[EvalRecord], n_bins: usize) -> Result<f64> {
    check(records)?;
    check_bins(n_bins)?;
    Ok(weighted_gap(&group_sorted(&sorted_pairs(records), n_bins).0))
}

/// Partition-size-weighted average of per-partition calibration errors.
/// Out-of-bounds records are one more group. Also returns `(n_s, CE_s)`.
pub fn estimate_ce_beta(
    records: &[EvalRecord],
    n_bins: usize,
) -> Result<(f64, BTreeMap<Assignment, (usize, f64)>)> {
    check(records)?;
    check_bins(n_bins)?;
    let n = records.len() as f64;
    let mut total = 0.0;
    let mut per = BTreeMap::new();
    for (s, pairs) in by_partition(records) {
        let ce_s = weighted_gap(&group_sorted(&pairs, n_bins).0);
        total += pairs.len() as f64 / n * ce_s;
        per.insert(s, (pairs.len(), ce_s));
    }
    Ok((total, per))
}

pub fn estimate_mce(records: &[EvalRecord], n_bins: usize) -> Result<f64> {
    check(records)?;
    check_bins(n_bins)?;
    Ok(max_gap(&group_sorted(&sorted_pairs(records), n_bins).0))
}

/// Largest gap over every (partition, confidence group) cell.
pub fn estimate_mce_beta(records: &[EvalRecord], n_bins: usize) -> Result<f64> {
    check(records)?;
    check_bins(n_bins)?;
    Ok(by_partition(records)
        .values()
        .map(|pairs| max_gap(&group_sorted(pairs, n_bins).0))
        .fold(0.0, f64::max))
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Accuracy of records with confidence strictly above each threshold.
/// An empty selection repeats the previous accuracy; if the very first
/// threshold selects nothing, the overall accuracy is used.
fn accuracy_curve(pairs: &[(f64, f64)], thresholds: &[f64]) -> Vec<f64> {
    // suffix sums over pairs sorted by confidence
    let n = pairs.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + pairs[i].1;
    }
    let mut last = suffix[0] / n as f64;
    thresholds
        .iter()
        .map(|&g| {
            let start = pairs.partition_point(|p| p.0 <= g);
            if start < n {
                last = suffix[start] / (n - start) as f64;
            }
            last
        })
        .collect()
}

fn check_grid(grid_size: usize) -> Result<()> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("AUAC grid needs at least 2 points".into()));
    }
    Ok(())
}

/// Area under the accuracy-versus-threshold curve on the uniform grid
/// `j / (G - 1)`, integrated with the trapezoid rule.
pub fn estimate_auac(records: &[EvalRecord], grid_size: usize) -> Result<f64> {
    check(records)?;
    check_grid(grid_size)?;
    let pairs = sorted_pairs(records);
    let grid: Vec<f64> = (0..grid_size).map(|j| j as f64 / (grid_size - 1) as f64).collect();
    Ok(trapezoid(&grid, &accuracy_curve(&pairs, &grid)))
}

/// AUAC with thresholds at empirical confidence quantiles, integrated over
/// the quantile level. Invariant under strictly increasing transformations
/// of the confidences, unlike [`estimate_auac`].
pub fn estimate_auac_quantile(records: &[EvalRecord], grid_size: usize) -> Result<f64> {
    check(records)?;
    check_grid(grid_size)?;
    let pairs = sorted_pairs(records);
    let n = pairs.len();
    let levels: Vec<f64> = (0..grid_size).map(|j| j as f64 / (grid_size - 1) as f64).collect();
    let thresholds: Vec<f64> = (0..grid_size)
        .map(|j| pairs[j * (n - 1) / (grid_size - 1)].0)
        .collect();
    Ok(trapezoid(&levels, &accuracy_curve(&pairs, &thresholds)))
}

/// Per-(partition, group) summary for reliability plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub partition: Assignment,
    pub group: usize,
    pub n: usize,
    pub mean_confidence: f64,
    pub mean_label: f64,
}

pub fn reliability_rows(records: &[EvalRecord], n_bins: usize) -> Result<Vec<ReliabilityRow>> {
    check(records)?;
    check_bins(n_bins)?;
    let mut rows = Vec::new();
    for (s, pairs) in by_partition(records) {
        for (k, g) in group_sorted(&pairs, n_bins).0.iter().enumerate() {
            rows.push(ReliabilityRow {
                partition: s,
                group: k,
                n: g.n,
                mean_confidence: g.conf_sum / g.n as f64,
                mean_label: g.label_sum / g.n as f64,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetric {
    pub n: usize,
    pub ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ce: f64,
    pub ce_beta: f64,
    pub mce: f64,
    pub mce_beta: f64,
    pub auac: f64,
    pub n: usize,
    pub per_partition: BTreeMap<Assignment, PartitionMetric>,
    pub binning_used: String,
}

pub fn evaluate(records: &[EvalRecord], n_bins: usize, grid_size: usize) -> Result<MetricsReport> {
    let (ce_beta, per) = estimate_ce_beta(records, n_bins)?;
    let grouping = group_sorted(&sorted_pairs(records), n_bins).1;
    Ok(MetricsReport {
        ce: estimate_ce(records, n_bins)?,
        ce_beta,
        mce: estimate_mce(records, n_bins)?,
        mce_beta: estimate_mce_beta(records, n_bins)?,
        auac: estimate_auac(records, grid_size)?,
        n: records.len(),
        per_partition: per
            .into_iter()
            .map(|(s, (n, ce))| (s, PartitionMetric { n, ce }))
            .collect(),
        binning_used: grouping.to_string(),
    })
}
