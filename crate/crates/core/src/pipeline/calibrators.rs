//! The calibrators compared by the sweep, behind one fit/predict interface.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::partitioner::{Assignment, Partitioner};
use crate::qa_binning::{fit_qa_binning, CalibratorTable};
use crate::scaler::{fit_scaler, HierScalerModel, ScalerMode, ScalerOptions, ScalerSample};
use crate::scaling::{fit_scaling_qa_binning, halve_indices, ScalingQabConfig};
use crate::umd::{fit_umd, UmdCalibrator, DEFAULT_DELTA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CalibratorKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "umd")]
    Umd,
    #[serde(rename = "platt")]
    Platt,
    #[serde(rename = "scale-bin")]
    ScaleBin,
    #[serde(rename = "qab")]
    Qab,
    #[serde(rename = "s-qab")]
    SQab,
    #[serde(rename = "hs-qab")]
    HsQab,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 7] = [
        CalibratorKind::None,
        CalibratorKind::Umd,
        CalibratorKind::Platt,
        CalibratorKind::ScaleBin,
        CalibratorKind::Qab,
        CalibratorKind::SQab,
        CalibratorKind::HsQab,
    ];

    /// Command-line and config spelling.
    pub fn key(self) -> &'static str {
        match self {
            CalibratorKind::None => "none",
            CalibratorKind::Umd => "umd",
            CalibratorKind::Platt => "platt",
            CalibratorKind::ScaleBin => "scale-bin",
            CalibratorKind::Qab => "qab",
            CalibratorKind::SQab => "s-qab",
            CalibratorKind::HsQab => "hs-qab",
        }
    }

    /// Short name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            CalibratorKind::None => "None",
            CalibratorKind::Umd => "B",
            CalibratorKind::Platt => "S",
            CalibratorKind::ScaleBin => "S-B",
            CalibratorKind::Qab => "QAB",
            CalibratorKind::SQab => "S-QAB",
            CalibratorKind::HsQab => "HS-QAB",
        }
    }

    pub fn needs_partitioner(self) -> bool {
        matches!(self, CalibratorKind::Qab | CalibratorKind::SQab | CalibratorKind::HsQab)
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibratorKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown calibrator {s:?}")))
    }
}

/// Hyperparameters for a single fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Minimum points per bin for the QA-binning family.
    pub b: Option<usize>,
    /// Bin count for the partition-free binning baselines.
    pub bins: Option<usize>,
    pub delta: f64,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    /// Seed of the scaler/binning split in the two-stage methods.
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            b: None,
            bins: None,
            delta: DEFAULT_DELTA,
            sigma_u2: 1.0,
            sigma_v2: 1.0,
            seed: 0,
        }
    }
}

/// A fitted calibrator. The scaler of the two-stage QA-binning methods is
/// kept for export but not used when predicting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedCalibrator {
    Identity,
    Umd { binner: UmdCalibrator },
    Platt { scaler: HierScalerModel },
    ScaleBin { scaler: HierScalerModel, binner: UmdCalibrator },
    Table { table: CalibratorTable, scaler: Option<HierScalerModel> },
}

impl FittedCalibrator {
    /// Calibrated confidence for a record already routed to `a`.
    pub fn predict(&self, h: f64, a: Assignment) -> Result<f64> {
        if !h.is_finite() || !(0.0..=1.0).contains(&h) {
            return Err(Error::OutOfUnitInterval {
                what: "confidence",
                value: h,
            });
        }
        match self {
            FittedCalibrator::Identity => Ok(h),
            FittedCalibrator::Umd { binner } => binner.apply(h),
            FittedCalibrator::Platt { scaler } => Ok(scaler.apply(h, Assignment::OutOfBounds)),
            FittedCalibrator::ScaleBin { binner, .. } => binner.apply(h),
            FittedCalibrator::Table { table, .. } => table.predict_assigned(a, h),
        }
    }

    pub fn table(&self) -> Option<&CalibratorTable> {
        match self {
            FittedCalibrator::Table { table, .. } => Some(table),
            _ => None,
        }
    }

    pub fn scaler(&self) -> Option<&HierScalerModel> {
        match self {
            FittedCalibrator::Platt { scaler } | FittedCalibrator::ScaleBin { scaler, .. } => Some(scaler),
            FittedCalibrator::Table { scaler, .. } => scaler.as_ref(),
            _ => None,
        }
    }
}

fn pooled_samples(cal: &Dataset, idx: &[usize]) -> Vec<ScalerSample> {
    idx.iter()
        .map(|&i| ScalerSample {
            confidence: cal.records[i].confidence,
            partition: Assignment::OutOfBounds,
            target: cal.records[i].label,
        })
        .collect()
}

fn bins_for(params: &FitParams, n: usize) -> Result<usize> {
    match (params.bins, params.b) {
        (Some(bins), _) => Ok(bins),
        (None, Some(b)) if b >= 2 => Ok((n / b).max(1)),
        (None, Some(b)) => Err(Error::BinSizeTooSmall(b)),
        (None, None) => Err(Error::InvalidParameter("binning needs a bin count or b".into())),
    }
}

fn need_b(params: &FitParams) -> Result<usize> {
    params
        .b
        .ok_or_else(|| Error::InvalidParameter("QA binning needs b".into()))
}

/// Fits `kind` on `cal`. The QA-binning family requires `part`.
pub fn fit_calibrator(
    kind: CalibratorKind,
    cal: &Dataset,
    part: Option<&Partitioner>,
    params: &FitParams,
) -> Result<FittedCalibrator> {
    if cal.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let need_part = || part.ok_or_else(|| Error::InvalidParameter(format!("{kind} needs a partitioner")));
    match kind {
        CalibratorKind::None => Ok(FittedCalibrator::Identity),
        CalibratorKind::Umd => {
            let pairs: Vec<(f64, f64)> = cal.records.iter().map(|r| (r.confidence, r.label)).collect();
            let bins = bins_for(params, pairs.len())?;
            Ok(FittedCalibrator::Umd {
                binner: fit_umd(&pairs, bins, params.delta)?,
            })
        }
        CalibratorKind::Platt => {
            let all: Vec<usize> = (0..cal.len()).collect();
            let fit = fit_scaler(&pooled_samples(cal, &all), &ScalerOptions::new(ScalerMode::Platt))?;
            Ok(FittedCalibrator::Platt { scaler: fit.model })
        }
        CalibratorKind::ScaleBin => {
            let (first, second) = halve_indices(cal.len(), 0.5, params.seed)?;
            let fit = fit_scaler(&pooled_samples(cal, &first), &ScalerOptions::new(ScalerMode::Platt))?;
            let pairs: Vec<(f64, f64)> = second
                .iter()
                .map(|&i| {
                    let h = cal.records[i].confidence;
                    (h, fit.model.apply(h, Assignment::OutOfBounds))
                })
                .collect();
            let bins = bins_for(params, pairs.len())?;
            Ok(FittedCalibrator::ScaleBin {
                binner: fit_umd(&pairs, bins, params.delta)?,
                scaler: fit.model,
            })
        }
        CalibratorKind::Qab => {
            let data = cal
                .records
                .iter()
                .map(|r| (r.embedding.as_slice(), r.confidence, r.label));
            Ok(FittedCalibrator::Table {
                table: fit_qa_binning(data, need_part()?, need_b(params)?, params.delta)?,
                scaler: None,
            })
        }
        CalibratorKind::SQab | CalibratorKind::HsQab => {
            let mode = if kind == CalibratorKind::SQab {
                ScalerMode::Pooled
            } else {
                ScalerMode::Hierarchical
            };
            let cfg = ScalingQabConfig {
                delta: params.delta,
                sigma_u2: params.sigma_u2,
                sigma_v2: params.sigma_v2,
                ..ScalingQabConfig::new(need_b(params)?, mode, params.seed)
            };
            let fit = fit_scaling_qa_binning(cal, need_part()?, &cfg)?;
            Ok(FittedCalibrator::Table {
                table: fit.table,
                scaler: Some(fit.scaler),
            })
        }
    }
}

pub const BUNDLE_FORMAT: &str = "qacal.bundle.v1";

/// On-disk description of a fitted calibrator. Large artifacts live in
/// sibling files named after the manifest (`<stem>.table.json`,
/// `<stem>.scaler.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub method: CalibratorKind,
    pub params: FitParams,
    /// Fingerprint of the partitioner the table was fit with, if any.
    pub partitioner_ref: Option<String>,
    pub nu_hat: Option<f64>,
    pub table_file: Option<String>,
    pub scaler_file: Option<String>,
    #[serde(default)]
    pub partitioner_file: Option<String>,
    /// Inline parameters for the partition-free calibrators.
    pub binner: Option<UmdCalibrator>,
}

fn sibling(manifest: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bundle".into());
    let name = format!("{stem}.{suffix}.json");
    (manifest.with_file_name(&name), name)
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub manifest: BundleManifest,
    pub fitted: FittedCalibrator,
    pub partitioner: Option<Partitioner>,
}

/// Writes the manifest and its sibling files. `part` is copied alongside
/// (`<stem>.partitioner.json`) so the bundle can predict on its own.
pub fn save_bundle(
    path: impl AsRef<Path>,
    method: CalibratorKind,
    params: &FitParams,
    fitted: &FittedCalibrator,
    part: Option<&Partitioner>,
    nu_hat: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let mut manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        method,
        params: *params,
        partitioner_ref: fitted.table().map(|t| t.partitioner_ref.clone()),
        nu_hat,
        table_file: None,
        scaler_file: None,
        partitioner_file: None,
        binner: None,
    };
    if let (Some(table), Some(p)) = (fitted.table(), part) {
        if table.partitioner_ref != p.fingerprint() {
            return Err(Error::PartitionerMismatch {
                expected: table.partitioner_ref.clone(),
                found: p.fingerprint(),
            });
        }
    }
    if let Some(table) = fitted.table() {
        let (p, name) = sibling(path, "table");
        table.save(&p)?;
        manifest.table_file = Some(name);
    }
    if let Some(scaler) = fitted.scaler() {
        let (p, name) = sibling(path, "scaler");
        scaler.save(&p)?;
        manifest.scaler_file = Some(name);
    }
    if let (Some(p), true) = (part, fitted.table().is_some()) {
        let (file, name) = sibling(path, "partitioner");
        p.save(&file)?;
        manifest.partitioner_file = Some(name);
    }
    if let FittedCalibrator::Umd { binner } | FittedCalibrator::ScaleBin { binner, .. } = fitted {
        manifest.binner = Some(binner.clone());
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<LoadedBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::UnknownFormat(manifest.format));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let scaler = manifest
        .scaler_file
        .as_ref()
        .map(|f| HierScalerModel::load(dir.join(f)))
        .transpose()?;
    let missing = |what: &str| Error::InvalidParameter(format!("bundle is missing its {what}"));
    let fitted = match manifest.method {
        CalibratorKind::None => FittedCalibrator::Identity,
        CalibratorKind::Umd => FittedCalibrator::Umd {
            binner: manifest.binner.clone().ok_or_else(|| missing("binner"))?,
        },
        CalibratorKind::Platt => FittedCalibrator::Platt {
            scaler: scaler.ok_or_else(|| missing("scaler"))?,
        },
        CalibratorKind::ScaleBin => FittedCalibrator::ScaleBin {
            scaler: scaler.ok_or_else(|| missing("scaler"))?,
            binner: manifest.binner.clone().ok_or_else(|| missing("binner"))?,
        },
        CalibratorKind::Qab | CalibratorKind::SQab | CalibratorKind::HsQab => {
            let file = manifest.table_file.as_ref().ok_or_else(|| missing("table"))?;
            FittedCalibrator::Table {
                table: CalibratorTable::load(dir.join(file))?,
                scaler,
            }
        }
    };
    let partitioner = manifest
        .partitioner_file
        .as_ref()
        .map(|f| Partitioner::load(dir.join(f)))
        .transpose()?;
    if let (Some(table), Some(p)) = (fitted.table(), &partitioner) {
        if table.partitioner_ref != p.fingerprint() {
            return Err(Error::PartitionerMismatch {
                expected: table.partitioner_ref.clone(),
                found: p.fingerprint(),
            });
        }
    }
    Ok(LoadedBundle {
        manifest,
        fitted,
        partitioner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::{generate_synthetic, ConfidenceLaw, SyntheticSpec};
    use crate::partitioner::{build_kdtree, DimOrder};

    fn data() -> Dataset {
        let spec = SyntheticSpec::hypercube(4, 150, vec![(0.3, 0.5), (0.0, 1.0), (-0.3, 2.0), (0.5, 1.5)], ConfidenceLaw::Uniform, 2)
            .unwrap();
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn kind_spellings_round_trip() {
        for k in CalibratorKind::ALL {
            assert_eq!(k.key().parse::<CalibratorKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.key()));
        }
        assert!("isotonic".parse::<CalibratorKind>().is_err());
    }

    #[test]
    fn identity_passes_through() {
        let f = fit_calibrator(CalibratorKind::None, &data(), None, &FitParams::default()).unwrap();
        assert_eq!(f.predict(0.37, Assignment::OutOfBounds).unwrap(), 0.37);
    }

    #[test]
    fn umd_baseline_equals_depth_zero_qab() {
        let ds = data();
        let part: Partitioner = build_kdtree(&ds.embeddings(), 0, DimOrder::Cycle).unwrap().into();
        let params = FitParams {
            b: Some(50),
            ..FitParams::default()
        };
        let umd = fit_calibrator(CalibratorKind::Umd, &ds, None, &params).unwrap();
        let qab = fit_calibrator(CalibratorKind::Qab, &ds, Some(&part), &params).unwrap();
        for r in &ds.records {
            let a = part.assign(&r.embedding).unwrap();
            assert_eq!(umd.predict(r.confidence, a).unwrap(), qab.predict(r.confidence, a).unwrap());
        }
    }

    #[test]
    fn partition_methods_require_partitioner() {
        let params = FitParams {
            b: Some(50),
            ..FitParams::default()
        };
        for k in [CalibratorKind::Qab, CalibratorKind::SQab, CalibratorKind::HsQab] {
            assert!(k.needs_partitioner());
            assert!(fit_calibrator(k, &data(), None, &params).is_err());
        }
    }

    #[test]
    fn bundle_rejects_a_foreign_partitioner() {
        let ds = data();
        let d2: Partitioner = build_kdtree(&ds.embeddings(), 2, DimOrder::Cycle).unwrap().into();
        let d1: Partitioner = build_kdtree(&ds.embeddings(), 1, DimOrder::Cycle).unwrap().into();
        let params = FitParams {
            b: Some(30),
            ..FitParams::default()
        };
        let fitted = fit_calibrator(CalibratorKind::Qab, &ds, Some(&d2), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = save_bundle(dir.path().join("b.json"), CalibratorKind::Qab, &params, &fitted, Some(&d1), None);
        assert!(matches!(err, Err(Error::PartitionerMismatch { .. })));
    }

    #[test]
    fn bundles_round_trip() {
        let ds = data();
        let dir = tempfile::tempdir().unwrap();
        let part: Partitioner = build_kdtree(&ds.embeddings(), 2, DimOrder::Cycle).unwrap().into();
        let params = FitParams {
            b: Some(30),
            bins: Some(5),
            ..FitParams::default()
        };
        for k in CalibratorKind::ALL {
            let fitted = fit_calibrator(k, &ds, Some(&part), &params).unwrap();
            let path = dir.path().join(format!("{}.json", k.key()));
            save_bundle(&path, k, &params, &fitted, Some(&part), Some(0.01)).unwrap();
            let back = load_bundle(&path).unwrap();
            assert_eq!(back.manifest.method, k);
            assert_eq!(back.fitted, fitted);
            assert_eq!(back.partitioner.is_some(), k.needs_partitioner());
        }
        assert!(dir.path().join("hs-qab.table.json").exists());
        assert!(dir.path().join("hs-qab.scaler.json").exists());
        assert!(dir.path().join("hs-qab.partitioner.json").exists());
        assert!(!dir.path().join("umd.partitioner.json").exists());
    }
}
