//! Per-partition binning with a root fallback.
//!
//! Training fits one UMD calibrator on all data (the root) and one per
//! partition that holds at least `b` points, each with `floor(n_s / b)` bins.
//! At prediction time an embedding routed to a fitted partition uses that
//! partition's calibrator; everything else (out of bounds, or a partition
//! that was skipped for being too small) uses the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::{Assignment, Partitioner};
use crate::umd::{fit_umd, UmdCalibrator};

pub const TABLE_FORMAT: &str = "qacal.table.v1";

/// One fitting observation after partition assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningPoint {
    pub partition: Assignment,
    pub confidence: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorTable {
    pub format: String,
    pub b_min: usize,
    pub partitioner_ref: String,
    pub root: UmdCalibrator,
    #[serde(rename = "partitions")]
    pub per_partition: BTreeMap<usize, UmdCalibrator>,
}

/// Fits the table on already-assigned points.
pub fn fit_table(
    points: &[BinningPoint],
    b: usize,
    delta: f64,
    partitioner_ref: impl Into<String>,
) -> Result<CalibratorTable> {
    if b < 2 {
        return Err(Error::BinSizeTooSmall(b));
    }
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let root_bins = points.len() / b;
    if root_bins == 0 {
        return Err(Error::InvalidParameter(format!(
            "floor(N / b) = 0 for N = {}, b = {b}",
            points.len()
        )));
    }
    let all: Vec<(f64, f64)> = points.iter().map(|p| (p.confidence, p.target)).collect();
    let root = fit_umd(&all, root_bins, delta)?;

    let mut groups: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        if let Assignment::Partition(s) = p.partition {
            groups.entry(s).or_default().push((p.confidence, p.target));
        }
    }
    let mut per_partition = BTreeMap::new();
    for (s, pairs) in groups {
        let bins = pairs.len() / b;
        if bins == 0 {
            log::debug!("partition {s}: {} points < b = {b}, routed to root", pairs.len());
            continue;
        }
        per_partition.insert(s, fit_umd(&pairs, bins, delta)?);
    }

    Ok(CalibratorTable {
        format: TABLE_FORMAT.to_string(),
        b_min: b,
        partitioner_ref: partitioner_ref.into(),
        root,
        per_partition,
    })
}

/// Assigns each `(embedding, confidence, target)` through `part` and fits.
pub fn fit_qa_binning<'a, I>(
    data: I,
    part: &Partitioner,
    b: usize,
    delta: f64,
) -> Result<CalibratorTable>
where
    I: IntoIterator<Item = (&'a [f64], f64, f64)>,
{
    let points = data
        .into_iter()
        .map(|(e, h, t)| {
            Ok(BinningPoint {
                partition: part.assign(e)?,
                confidence: h,
                target: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit_table(&points, b, delta, part.fingerprint())
}

impl CalibratorTable {
    /// Calibrator used for a given assignment.
    pub fn calibrator_for(&self, a: Assignment) -> &UmdCalibrator {
        a.partition()
            .and_then(|s| self.per_partition.get(&s))
            .unwrap_or(&self.root)
    }

    pub fn predict_assigned(&self, a: Assignment, h: f64) -> Result<f64> {
        self.calibrator_for(a).apply(h)
    }

    /// Prediction for a raw embedding. Refuses a partitioner other than the
    /// one the table was fit with.
    pub fn predict(&self, part: &Partitioner, embedding: &[f64], h: f64) -> Result<f64> {
        let found = part.fingerprint();
        if found != self.partitioner_ref {
            return Err(Error::PartitionerMismatch {
                expected: self.partitioner_ref.clone(),
                found,
            });
        }
        self.predict_assigned(part.assign(embedding)?, h)
    }

    /// Upper bound on the number of distinct outputs.
    pub fn max_distinct_outputs(&self) -> usize {
        self.root.bins() + self.per_partition.values().map(UmdCalibrator::bins).sum::<usize>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: CalibratorTable = serde_json::from_str(text)?;
        if table.format != TABLE_FORMAT {
            return Err(Error::UnknownFormat(table.format));
        }
        Ok(table)
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
