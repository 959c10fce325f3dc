//! Record model, JSONL I/O and the seeded four-way split.
//!
//! A dataset is a list of `(embedding, confidence, label)` observations. The
//! label is either a binary ground-truth correctness flag or a fractional
//! proxy target; both share one field, tagged by [`LabelKind`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    GroundTruth,
    Proxy,
}

/// One question-answer observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    pub confidence: f64,
    pub label: f64,
    #[serde(default)]
    pub label_kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Calibrated score written by `predict`; absent on raw data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated: Option<f64>,
}

impl CalibrationRecord {
    pub fn new(id: impl Into<String>, embedding: Vec<f64>, confidence: f64, label: f64) -> Self {
        Self {
            id: id.into(),
            embedding,
            confidence,
            label,
            label_kind: LabelKind::GroundTruth,
            question: None,
            answer: None,
            calibrated: None,
        }
    }

    /// Checks the range rules. `line` is only used for error messages.
    pub fn validate(&self, line: usize) -> Result<()> {
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::ConfidenceOutOfRange {
                line,
                value: self.confidence,
            });
        }
        let label_ok = self.label.is_finite()
            && match self.label_kind {
                LabelKind::GroundTruth => self.label == 0.0 || self.label == 1.0,
                LabelKind::Proxy => (0.0..=1.0).contains(&self.label),
            };
        if !label_ok {
            return Err(Error::LabelOutOfRange {
                line,
                value: self.label,
            });
        }
        if self.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedLine {
                line,
                message: "non-finite embedding coordinate".into(),
            });
        }
        if let Some(c) = self.calibrated {
            if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                return Err(Error::MalformedLine {
                    line,
                    message: format!("calibrated score out of range: {c}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<CalibrationRecord>,
    pub embedding_dim: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds a dataset, enforcing the per-record and whole-set invariants.
    pub fn new(records: Vec<CalibrationRecord>, expected_dim: Option<usize>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let dim = expected_dim.unwrap_or(first.embedding.len());
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            r.validate(line)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            embedding_dim: dim,
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embeddings(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.embedding.as_slice()).collect()
    }

    fn subset(&self, records: Vec<CalibrationRecord>) -> Dataset {
        Dataset {
            records,
            embedding_dim: self.embedding_dim,
            metadata: self.metadata.clone(),
        }
    }
}

/// Parses JSONL from any reader. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut dim = expected_dim;
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CalibrationRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
        let want = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.len() != want {
            return Err(Error::DimensionMismatch {
                line: lineno,
                expected: want,
                found: rec.embedding.len(),
            });
        }
        rec.validate(lineno)?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        records,
        embedding_dim: dim.unwrap_or(0),
        metadata: BTreeMap::new(),
    })
}

/// Sidecar written by the embedding exporter next to its JSONL output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub model: String,
    pub revision: String,
    pub dimension: usize,
}

/// `data/pairs.jsonl` -> `data/pairs.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

/// Loads a JSONL dataset. If an [`EmbeddingManifest`] sidecar exists, its
/// dimension is enforced and its fields are copied into the metadata.
pub fn load_dataset(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let sidecar = manifest_path(path);
    let manifest: Option<EmbeddingManifest> = if sidecar.is_file() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let expected_dim = match (expected_dim, &manifest) {
        (Some(want), Some(m)) if want != m.dimension => {
            return Err(Error::EmbeddingDimension {
                expected: want,
                found: m.dimension,
            })
        }
        (Some(want), _) => Some(want),
        (None, m) => m.as_ref().map(|m| m.dimension),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = read_jsonl(BufReader::new(file), expected_dim)?;
    ds.metadata
        .insert("source".into(), path.display().to_string());
    if let Some(m) = manifest {
        ds.metadata.insert("model".into(), m.model);
        ds.metadata.insert("revision".into(), m.revision);
        ds.metadata.insert("dimension".into(), m.dimension.to_string());
    }
    Ok(ds)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[CalibrationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(&mut w, &dataset.records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fractions and seed for the tree / calibration / tuning / test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 4],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.2, 0.6, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidFractions(format!("{:?}", self.fractions)));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidFractions(format!(
                "{:?} sums to {sum}",
                self.fractions
            )));
        }
        Ok(())
    }

    /// Split sizes for `n` records. Tree, tuning and test sizes are floored;
    /// the remainder goes to the calibration split.
    pub fn sizes(&self, n: usize) -> [usize; 4] {
        // The 1e-9 slack absorbs products such as 10 * 0.6 = 5.999...
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let tree = floor(self.fractions[0]);
        let tune = floor(self.fractions[2]);
        let test = floor(self.fractions[3]);
        let cal = n - tree - tune - test;
        [tree, cal, tune, test]
    }
}

/// The four parts of a split, in protocol order.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub tree: Dataset,
    pub cal: Dataset,
    pub tune: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn parts(&self) -> [&Dataset; 4] {
        [&self.tree, &self.cal, &self.tune, &self.test]
    }
}

/// Seeded uniform shuffle followed by contiguous slicing.
pub fn split_dataset(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let sizes = spec.sizes(n);
    let mut parts = Vec::with_capacity(4);
    let mut start = 0;
    for size in sizes {
        let records = order[start..start + size]
            .iter()
            .map(|&i| dataset.records[i].clone())
            .collect();
        parts.push(dataset.subset(records));
        start += size;
    }
    let mut it = parts.into_iter();
    Ok(Splits {
        tree: it.next().unwrap(),
        cal: it.next().unwrap(),
        tune: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}
