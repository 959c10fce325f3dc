use qacal_core::guarantees::{sample_synthetic, ConfidenceLaw, SyntheticSpec};
use qacal_core::partitioner::Assignment;
use qacal_core::scaler::{select_prior_variance, ScalerSample, DEFAULT_VARIANCE_GRID};

const TRIALS: u64 = 50;

fn samples(spec: &SyntheticSpec) -> Vec<ScalerSample> {
    let draw = sample_synthetic(spec).unwrap();
    draw.dataset
        .records
        .iter()
        .zip(&draw.clusters)
        .map(|(r, &c)| ScalerSample {
            confidence: r.confidence,
            partition: Assignment::Partition(c),
            target: r.label,
        })
        .collect()
}

fn pick(miscalibration: Vec<(f64, f64)>, points: usize, seed: u64) -> (f64, f64) {
    let n = miscalibration.len();
    let spec = SyntheticSpec::hypercube(n, points, miscalibration, ConfidenceLaw::Uniform, seed).unwrap();
    let train = samples(&spec);
    let holdout = samples(&spec.with_seed(seed + 1_000_000));
    select_prior_variance(&train, &holdout, &DEFAULT_VARIANCE_GRID, 100, 1e-8).unwrap()
}

#[test]
fn shared_curve_selects_the_most_pooling() {
    let smallest = DEFAULT_VARIANCE_GRID[0];
    let hits = (0..TRIALS)
        .filter(|&t| pick(vec![(0.2, 1.2); 8], 1000, 100 + t) == (smallest, smallest))
        .count();
    assert!(hits as f64 >= 0.8 * TRIALS as f64, "{hits}/{TRIALS}");
}

#[test]
fn heterogeneous_slopes_select_a_larger_slope_variance() {
    let smallest = DEFAULT_VARIANCE_GRID[0];
    let slopes = [0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
    let hits = (0..TRIALS)
        .filter(|&t| pick(slopes.iter().map(|&c| (0.0, c)).collect(), 150, 500 + t).1 > smallest)
        .count();
    assert!(hits as f64 >= 0.8 * TRIALS as f64, "{hits}/{TRIALS}");
}
