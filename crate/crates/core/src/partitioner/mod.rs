//! The fixed grouping of question-answer pairs: embedding vectors are mapped
//! to a finite set of partition indices by a kd-tree or by k-means.
//!
//! Both partitioners are immutable once built and serialize to versioned
//! JSON so a fitted pipeline can be reloaded.

mod kdtree;
mod kmeans;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use kdtree::{build_kdtree, DimOrder, KdTreeNode, KdTreePartitioner};
pub use kmeans::{build_kmeans, KMeansPartitioner, DEFAULT_KMEANS_ITERS};

/// Result of routing an embedding through a partitioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assignment {
    Partition(usize),
    /// Outside the bounding values recorded while building a kd-tree.
    OutOfBounds,
}

impl Assignment {
    pub fn partition(self) -> Option<usize> {
        match self {
            Assignment::Partition(s) => Some(s),
            Assignment::OutOfBounds => None,
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Partition(s) => write!(f, "{s}"),
            Assignment::OutOfBounds => f.write_str("oob"),
        }
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oob" {
            return Ok(Assignment::OutOfBounds);
        }
        s.parse()
            .map(Assignment::Partition)
            .map_err(|_| Error::InvalidParameter(format!("bad partition key {s:?}")))
    }
}

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A built partitioner of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format")]
pub enum Partitioner {
    #[serde(rename = "kdtree.v1")]
    KdTree(KdTreePartitioner),
    #[serde(rename = "kmeans.v1")]
    KMeans(KMeansPartitioner),
}

impl Partitioner {
    pub fn assign(&self, embedding: &[f64]) -> Result<Assignment> {
        match self {
            Partitioner::KdTree(t) => t.assign(embedding),
            Partitioner::KMeans(k) => k.assign(embedding),
        }
    }

    pub fn n_partitions(&self) -> usize {
        match self {
            Partitioner::KdTree(t) => t.n_leaves(),
            Partitioner::KMeans(k) => k.centroids.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Partitioner::KdTree(t) => t.dim,
            Partitioner::KMeans(k) => k.dim(),
        }
    }

    /// Stable identifier: truncated SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("partitioner serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some("kdtree.v1") | Some("kmeans.v1") => Ok(serde_json::from_value(value)?),
            Some(other) => Err(Error::UnknownFormat(other.to_string())),
            None => Err(Error::UnknownFormat(String::new())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl From<KdTreePartitioner> for Partitioner {
    fn from(t: KdTreePartitioner) -> Self {
        Partitioner::KdTree(t)
    }
}

impl From<KMeansPartitioner> for Partitioner {
    fn from(k: KMeansPartitioner) -> Self {
        Partitioner::KMeans(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_string_round_trip() {
        for a in [Assignment::Partition(7), Assignment::OutOfBounds] {
            assert_eq!(a.to_string().parse::<Assignment>().unwrap(), a);
        }
        assert!("x".parse::<Assignment>().is_err());
    }

    #[test]
    fn serialization_round_trip_and_fingerprint() {
        let pts: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let tree: Partitioner = build_kdtree(&refs, 2, DimOrder::Cycle).unwrap().into();
        let back = Partitioner::from_json(&tree.to_json().unwrap()).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.fingerprint(), tree.fingerprint());

        let km: Partitioner = build_kmeans(&refs, 3, 9).unwrap().into();
        let back = Partitioner::from_json(&km.to_json().unwrap()).unwrap();
        assert_eq!(back, km);
        assert_ne!(km.fingerprint(), tree.fingerprint());
    }

    #[test]
    fn unknown_format_rejected() {
        let err = Partitioner::from_json(r#"{"format":"octree.v9"}"#).unwrap_err();
        assert!(matches!(err, Error::UnknownFormat(_)));
    }
}
