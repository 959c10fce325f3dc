use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Assignment;
use crate::error::{Error, Result};

pub const DEFAULT_KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansPartitioner {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub n_iter_max: usize,
}

impl KMeansPartitioner {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid under Euclidean distance, lowest index on ties.
    pub fn assign(&self, embedding: &[f64]) -> Result<Assignment> {
        if embedding.len() != self.dim() {
            return Err(Error::EmbeddingDimension {
                expected: self.dim(),
                found: embedding.len(),
            });
        }
        Ok(Assignment::Partition(nearest(&self.centroids, embedding).0))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[&[f64]]) -> usize {
    let mut sorted: Vec<&[f64]> = points.to_vec();
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    sorted.sort_by(cmp);
    sorted.dedup_by(|a, b| cmp(a, b).is_eq());
    sorted.len()
}

pub fn build_kmeans(points: &[&[f64]], k: usize, seed: u64) -> Result<KMeansPartitioner> {
    build_kmeans_with(points, k, seed, DEFAULT_KMEANS_ITERS)
}

/// Lloyd iterations from a seeded k-means++ start, stopping at an assignment
/// fixpoint or after `n_iter_max` updates.
pub fn build_kmeans_with(
    points: &[&[f64]],
    k: usize,
    seed: u64,
    n_iter_max: usize,
) -> Result<KMeansPartitioner> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::EmbeddingDimension {
            expected: dim,
            found: bad.len(),
        });
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::TooManyCentroids { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        // k <= distinct guarantees some point still has positive weight
        let c = points[pick.expect("positive weight remains")].to_vec();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..n_iter_max {
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }

    Ok(KMeansPartitioner {
        centroids,
        seed,
        n_iter_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|p| p.as_slice()).collect()
    }

    #[test]
    fn single_centroid_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let km = build_kmeans(&refs(&pts), 1, 5).unwrap();
        assert_eq!(km.centroids, vec![vec![2.0, 2.0]]);
        for p in &pts {
            assert_eq!(km.assign(p).unwrap(), Assignment::Partition(0));
        }
    }

    #[test]
    fn separated_clusters_recovered() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64 * 0.37).sin() * 0.1;
            pts.push(vec![jitter, jitter]);
            pts.push(vec![100.0 + jitter, 100.0 - jitter]);
        }
        for seed in 0..10 {
            let km = build_kmeans(&refs(&pts), 2, seed).unwrap();
            let a = km.assign(&pts[0]).unwrap();
            let b = km.assign(&pts[1]).unwrap();
            assert_ne!(a, b);
            for pair in pts.chunks(2) {
                assert_eq!(km.assign(&pair[0]).unwrap(), a);
                assert_eq!(km.assign(&pair[1]).unwrap(), b);
            }
        }
    }

    #[test]
    fn one_centroid_per_distinct_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = build_kmeans(&refs(&pts), 6, 1).unwrap();
        let mut seen: Vec<usize> = pts
            .iter()
            .map(|p| km.assign(p).unwrap().partition().unwrap())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_centroids() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        let err = build_kmeans(&refs(&pts), 3, 0).unwrap_err();
        assert!(matches!(err, Error::TooManyCentroids { k: 3, distinct: 2 }));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let km = KMeansPartitioner {
            centroids: vec![vec![-1.0], vec![1.0]],
            seed: 0,
            n_iter_max: 1,
        };
        assert_eq!(km.assign(&[0.0]).unwrap(), Assignment::Partition(0));
    }

    #[test]
    fn deterministic_for_seed() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 1.3).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let a = build_kmeans(&refs(&pts), 4, 77).unwrap();
        let b = build_kmeans(&refs(&pts), 4, 77).unwrap();
        assert_eq!(a, b);
    }
}
