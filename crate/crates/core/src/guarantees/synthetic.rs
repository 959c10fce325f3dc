//! Seeded synthetic calibration data with known conditional accuracy.
//!
//! Each partition is a Gaussian cluster in embedding space. Confidences are
//! drawn from a shared law, and labels are Bernoulli with
//! `p(h, s) = logistic(a_s + c_s * logit(h))`, so `(a_s, c_s) = (0, 1)` is
//! perfectly calibrated and other pairs encode per-partition miscalibration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CalibrationRecord, Dataset, LabelKind};
use crate::error::{Error, Result};
use crate::scaler::logistic;

/// Distance of cluster centres from the origin along each axis.
pub const CORNER_OFFSET: f64 = 10.0;
const CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceLaw {
    Uniform,
    Beta { a: f64, b: f64 },
}

impl ConfidenceLaw {
    /// Density up to a constant factor.
    pub fn unnormalized_density(&self, h: f64) -> f64 {
        match *self {
            ConfidenceLaw::Uniform => 1.0,
            ConfidenceLaw::Beta { a, b } => h.powf(a - 1.0) * (1.0 - h).powf(b - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLaw {
    pub mean: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_partitions: usize,
    pub points_per_partition: usize,
    /// `(a_s, c_s)` per partition.
    pub miscalibration: Vec<(f64, f64)>,
    pub confidence_law: ConfidenceLaw,
    /// One cluster per partition. Left empty in JSON, the hypercube layout
    /// is used (see [`SyntheticSpec::from_json`]).
    #[serde(default)]
    pub embedding_law: Vec<ClusterLaw>,
    pub seed: u64,
    /// Labels are drawn from `min(p + label_shift, 1)`: a bounded proxy
    /// shift for misspecification experiments.
    #[serde(default)]
    pub label_shift: f64,
}

fn logit(h: f64) -> f64 {
    let h = h.clamp(CLAMP, 1.0 - CLAMP);
    (h / (1.0 - h)).ln()
}

impl SyntheticSpec {
    /// Clusters at the corners `{-L, +L}^d` of a hypercube with
    /// `d = log2(n_partitions)`, so a cycling kd-tree of depth `d` separates
    /// them. `n_partitions` must be a power of two.
    pub fn hypercube(
        n_partitions: usize,
        points_per_partition: usize,
        miscalibration: Vec<(f64, f64)>,
        confidence_law: ConfidenceLaw,
        seed: u64,
    ) -> Result<Self> {
        if !n_partitions.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "hypercube layout needs a power-of-two partition count, got {n_partitions}"
            )));
        }
        let d = n_partitions.trailing_zeros() as usize;
        let dim = d.max(1);
        let embedding_law = (0..n_partitions)
            .map(|k| ClusterLaw {
                mean: (0..dim)
                    .map(|j| if j < d && (k >> j) & 1 == 1 { CORNER_OFFSET } else { -CORNER_OFFSET })
                    .collect(),
                scale: 1.0,
            })
            .collect();
        let spec = Self {
            n_partitions,
            points_per_partition,
            miscalibration,
            confidence_law,
            embedding_law,
            seed,
            label_shift: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a spec; an absent or empty `embedding_law` gets the
    /// hypercube layout.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut spec: SyntheticSpec = serde_json::from_str(text)?;
        if spec.embedding_law.is_empty() {
            let shift = spec.label_shift;
            spec = Self::hypercube(
                spec.n_partitions,
                spec.points_per_partition,
                spec.miscalibration,
                spec.confidence_law,
                spec.seed,
            )?;
            spec.label_shift = shift;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn total_points(&self) -> usize {
        self.n_partitions * self.points_per_partition
    }

    pub fn dim(&self) -> usize {
        self.embedding_law.first().map_or(0, |c| c.mean.len())
    }

    /// True accuracy `P(Y = 1 | h, s)` before any label shift.
    pub fn accuracy(&self, h: f64, s: usize) -> f64 {
        let (a, c) = self.miscalibration[s];
        logistic(a + c * logit(h))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_partitions == 0 || self.points_per_partition == 0 {
            return bad("partition count and size must be positive".into());
        }
        if self.miscalibration.len() != self.n_partitions || self.embedding_law.len() != self.n_partitions {
            return bad(format!(
                "expected {} miscalibration pairs and clusters, got {} and {}",
                self.n_partitions,
                self.miscalibration.len(),
                self.embedding_law.len()
            ));
        }
        if self.miscalibration.iter().any(|(a, c)| !a.is_finite() || !c.is_finite()) {
            return Err(Error::NonFinite("miscalibration"));
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        for c in &self.embedding_law {
            if c.mean.len() != dim {
                return Err(Error::EmbeddingDimension {
                    expected: dim,
                    found: c.mean.len(),
                });
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) || c.mean.iter().any(|x| !x.is_finite()) {
                return bad("cluster means must be finite and scales positive".into());
            }
        }
        if let ConfidenceLaw::Beta { a, b } = self.confidence_law {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return bad(format!("beta parameters must be positive, got ({a}, {b})"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_shift) {
            return bad(format!("label_shift must lie in [0, 1], got {}", self.label_shift));
        }
        Ok(())
    }
}

/// A generated dataset together with the cluster each record came from.
#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub dataset: Dataset,
    pub clusters: Vec<usize>,
}

pub fn sample_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let conf_beta = match spec.confidence_law {
        ConfidenceLaw::Uniform => None,
        ConfidenceLaw::Beta { a, b } => {
            Some(Beta::new(a, b).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        }
    };
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(spec.total_points());
    let mut clusters = Vec::with_capacity(spec.total_points());
    for (s, cluster) in spec.embedding_law.iter().enumerate() {
        for i in 0..spec.points_per_partition {
            let embedding: Vec<f64> = cluster
                .mean
                .iter()
                .map(|m| m + cluster.scale * std_normal.sample(&mut rng))
                .collect();
            let h: f64 = match &conf_beta {
                None => rng.random(),
                Some(d) => d.sample(&mut rng),
            };
            let p = (spec.accuracy(h, s) + spec.label_shift).min(1.0);
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            let mut rec = CalibrationRecord::new(format!("syn-{s}-{i}"), embedding, h, y);
            if spec.label_shift > 0.0 {
                rec.label_kind = LabelKind::Proxy;
            }
            records.push(rec);
            clusters.push(s);
        }
    }
    let mut dataset = Dataset::new(records, Some(spec.dim()))?;
    dataset.metadata = BTreeMap::from([
        ("source".to_string(), "synthetic".to_string()),
        ("seed".to_string(), spec.seed.to_string()),
    ]);
    Ok(SyntheticDraw { dataset, clusters })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    Ok(sample_synthetic(spec)?.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioner::{build_kdtree, DimOrder};

    fn calibrated(n_partitions: usize, points: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec::hypercube(n_partitions, points, vec![(0.0, 1.0); n_partitions], ConfidenceLaw::Uniform, seed)
            .unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = calibrated(4, 50, 3);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.records, b.records);
        let c = generate_synthetic(&spec.with_seed(4)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn constant_accuracy_mean() {
        let a = (0.7f64 / 0.3).ln();
        let spec = SyntheticSpec::hypercube(2, 5000, vec![(a, 0.0); 2], ConfidenceLaw::Beta { a: 2.0, b: 2.0 }, 8).unwrap();
        let ds = generate_synthetic(&spec).unwrap();
        let mean = ds.records.iter().map(|r| r.label).sum::<f64>() / ds.len() as f64;
        assert!((mean - 0.7).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn calibrated_generator_has_small_binned_gap() {
        // Independent check with ten fixed-width bins.
        let ds = generate_synthetic(&calibrated(4, 5000, 17)).unwrap();
        let mut sums = [(0.0, 0.0, 0usize); 10];
        for r in &ds.records {
            let k = ((r.confidence * 10.0) as usize).min(9);
            sums[k].0 += r.confidence;
            sums[k].1 += r.label;
            sums[k].2 += 1;
        }
        let ce: f64 = sums.iter().map(|(h, y, _)| (h - y).abs()).sum::<f64>() / ds.len() as f64;
        assert!(ce <= 0.03, "{ce}");
    }

    #[test]
    fn kdtree_recovers_corner_clusters() {
        let draw = sample_synthetic(&calibrated(8, 200, 5)).unwrap();
        let refs: Vec<&[f64]> = draw.dataset.records.iter().map(|r| r.embedding.as_slice()).collect();
        let tree = build_kdtree(&refs, 3, DimOrder::Cycle).unwrap();
        let mut leaf_of_cluster: BTreeMap<usize, usize> = BTreeMap::new();
        for (r, &c) in draw.dataset.records.iter().zip(&draw.clusters) {
            let leaf = tree.assign(&r.embedding).unwrap().partition().unwrap();
            assert_eq!(*leaf_of_cluster.entry(c).or_insert(leaf), leaf);
        }
        let mut leaves: Vec<usize> = leaf_of_cluster.values().copied().collect();
        leaves.sort_unstable();
        leaves.dedup();
        assert_eq!(leaves.len(), 8);
    }

    #[test]
    fn label_shift_marks_proxy_and_raises_mean() {
        let mut spec = calibrated(2, 4000, 9);
        let base = generate_synthetic(&spec).unwrap();
        spec.label_shift = 0.1;
        let shifted = generate_synthetic(&spec).unwrap();
        let mean = |d: &Dataset| d.records.iter().map(|r| r.label).sum::<f64>() / d.len() as f64;
        assert!(mean(&shifted) - mean(&base) > 0.05);
        assert!(shifted.records.iter().all(|r| r.label_kind == LabelKind::Proxy));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SyntheticSpec::hypercube(3, 10, vec![(0.0, 1.0); 3], ConfidenceLaw::Uniform, 0).is_err());
        assert!(SyntheticSpec::hypercube(2, 10, vec![(0.0, 1.0)], ConfidenceLaw::Uniform, 0).is_err());
        assert!(SyntheticSpec::hypercube(2, 10, vec![(0.0, 1.0); 2], ConfidenceLaw::Beta { a: 0.0, b: 1.0 }, 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticSpec::hypercube(4, 10, vec![(0.1, 2.0); 4], ConfidenceLaw::Beta { a: 2.0, b: 5.0 }, 1).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"beta\""));
        let back: SyntheticSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn omitted_layout_defaults_to_hypercube() {
        let text = r#"{"n_partitions": 4, "points_per_partition": 10, "miscalibration": [[0, 1], [0, 1], [0, 2], [0, 3]],
            "confidence_law": {"kind": "uniform"}, "seed": 3, "label_shift": 0.02}"#;
        let spec = SyntheticSpec::from_json(text).unwrap();
        let mut expected =
            SyntheticSpec::hypercube(4, 10, vec![(0.0, 1.0), (0.0, 1.0), (0.0, 2.0), (0.0, 3.0)], ConfidenceLaw::Uniform, 3)
                .unwrap();
        expected.label_shift = 0.02;
        assert_eq!(spec, expected);
        assert!(SyntheticSpec::from_json(&text.replace("\"n_partitions\": 4", "\"n_partitions\": 3")).is_err());
    }
}
