//! Shared fixtures for the benchmarks.

use qacal_core::guarantees::{generate_synthetic, ConfidenceLaw, SyntheticSpec};
use qacal_core::metrics::EvalRecord;
use qacal_core::partitioner::{build_kdtree, DimOrder};
use qacal_core::scaler::ScalerSample;
use qacal_core::{Dataset, Partitioner};

/// Heterogeneous synthetic data: `partitions` hypercube clusters (a power of
/// two) with miscalibration slopes spread between 0.3 and 3.
pub fn dataset(partitions: usize, points: usize, seed: u64) -> Dataset {
    let slopes = (0..partitions)
        .map(|s| (0.0, 0.3 + 2.7 * s as f64 / (partitions.max(2) - 1) as f64))
        .collect();
    let spec = SyntheticSpec::hypercube(partitions, points, slopes, ConfidenceLaw::Uniform, seed)
        .expect("valid synthetic spec");
    generate_synthetic(&spec).expect("generator accepts a valid spec")
}

pub fn kdtree(ds: &Dataset, depth: usize) -> Partitioner {
    build_kdtree(&ds.embeddings(), depth, DimOrder::Cycle)
        .expect("enough points for the depth")
        .into()
}

pub fn pairs(ds: &Dataset) -> Vec<(f64, f64)> {
    ds.records.iter().map(|r| (r.confidence, r.label)).collect()
}

pub fn scaler_samples(ds: &Dataset, part: &Partitioner) -> Vec<ScalerSample> {
    ds.records
        .iter()
        .map(|r| ScalerSample {
            confidence: r.confidence,
            partition: part.assign(&r.embedding).expect("matching dimension"),
            target: r.label,
        })
        .collect()
}

pub fn eval_records(ds: &Dataset, part: &Partitioner) -> Vec<EvalRecord> {
    ds.records
        .iter()
        .map(|r| EvalRecord::new(part.assign(&r.embedding).expect("matching dimension"), r.confidence, r.label))
        .collect()
}
