use serde::{Deserialize, Serialize};

use super::Assignment;
use crate::error::{Error, Result};

const MAX_DEPTH: usize = 24;

/// How the split coordinate is chosen at each internal node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimOrder {
    /// Coordinate `level mod M`, shared by every node on a level.
    #[default]
    Cycle,
    /// Highest-variance coordinate of the node's points (lowest index on ties).
    MaxVariance,
}

/// Internal node, stored in heap order: children of key `k` are `2k+1`, `2k+2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdTreeNode {
    pub key: usize,
    pub coord: usize,
    pub pivot: f64,
    /// Smallest and largest build value of `coord` among the node's points.
    /// `None` when no build point reached the node.
    pub bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdTreePartitioner {
    pub depth: usize,
    pub dim: usize,
    pub dim_order: DimOrder,
    pub nodes: Vec<KdTreeNode>,
    /// Number of build points that landed in each leaf.
    pub leaf_counts: Vec<usize>,
}

impl KdTreePartitioner {
    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    fn first_leaf_key(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// Routes an embedding to a leaf, or reports it out of bounds when a
    /// checked coordinate falls outside the node's recorded build range.
    pub fn assign(&self, embedding: &[f64]) -> Result<Assignment> {
        if embedding.len() != self.dim {
            return Err(Error::EmbeddingDimension {
                expected: self.dim,
                found: embedding.len(),
            });
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let mut key = 0;
        for _ in 0..self.depth {
            let node = &self.nodes[key];
            let x = embedding[node.coord];
            match node.bounds {
                Some([lo, hi]) if x >= lo && x <= hi => {}
                _ => return Ok(Assignment::OutOfBounds),
            }
            key = if x <= node.pivot { 2 * key + 1 } else { 2 * key + 2 };
        }
        Ok(Assignment::Partition(key - self.first_leaf_key()))
    }
}

/// Recursive lower-median split to exactly `depth` levels.
pub fn build_kdtree(points: &[&[f64]], depth: usize, dim_order: DimOrder) -> Result<KdTreePartitioner> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "kd-tree depth {depth} exceeds {MAX_DEPTH}"
        )));
    }
    let needed = 1usize << depth;
    if n < needed {
        return Err(Error::TooFewPoints {
            depth,
            needed,
            got: n,
        });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::EmbeddingDimension {
            expected: dim,
            found: bad.len(),
        });
    }
    if depth > 0 && dim == 0 {
        return Err(Error::InvalidParameter("zero-dimensional embeddings".into()));
    }
    if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("embedding"));
    }

    let mut builder = Builder {
        points,
        depth,
        dim_order,
        nodes: (0..needed - 1)
            .map(|key| KdTreeNode {
                key,
                coord: 0,
                pivot: 0.0,
                bounds: None,
            })
            .collect(),
        leaf_counts: vec![0; needed],
    };
    builder.split(0, 0, (0..n).collect());

    Ok(KdTreePartitioner {
        depth,
        dim,
        dim_order,
        nodes: builder.nodes,
        leaf_counts: builder.leaf_counts,
    })
}

struct Builder<'a> {
    points: &'a [&'a [f64]],
    depth: usize,
    dim_order: DimOrder,
    nodes: Vec<KdTreeNode>,
    leaf_counts: Vec<usize>,
}

impl Builder<'_> {
    fn split(&mut self, key: usize, level: usize, mut idx: Vec<usize>) {
        if level == self.depth {
            self.leaf_counts[key - ((1 << self.depth) - 1)] = idx.len();
            return;
        }
        let coord = match self.dim_order {
            DimOrder::Cycle => level % self.points[0].len(),
            DimOrder::MaxVariance => self.max_variance_coord(&idx),
        };
        self.nodes[key].coord = coord;
        if idx.is_empty() {
            self.split(2 * key + 1, level + 1, Vec::new());
            self.split(2 * key + 2, level + 1, Vec::new());
            return;
        }

        let pts = self.points;
        idx.sort_by(|&a, &b| pts[a][coord].total_cmp(&pts[b][coord]));
        let n = idx.len();
        let pivot = pts[idx[n.div_ceil(2) - 1]][coord];
        self.nodes[key].pivot = pivot;
        self.nodes[key].bounds = Some([pts[idx[0]][coord], pts[idx[n - 1]][coord]]);

        let cut = idx.partition_point(|&i| pts[i][coord] <= pivot);
        let right = idx.split_off(cut);
        self.split(2 * key + 1, level + 1, idx);
        self.split(2 * key + 2, level + 1, right);
    }

    fn max_variance_coord(&self, idx: &[usize]) -> usize {
        let dim = self.points[0].len();
        if idx.len() < 2 {
            return 0;
        }
        let n = idx.len() as f64;
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..dim {
            let mean = idx.iter().map(|&i| self.points[i][c]).sum::<f64>() / n;
            let var = idx
                .iter()
                .map(|&i| (self.points[i][c] - mean).powi(2))
                .sum::<f64>()
                / n;
            if var > best.1 {
                best = (c, var);
            }
        }
        best.0
    }
}
