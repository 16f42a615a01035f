//! Standard clustering algorithms applied to feature vectors.
//!
//! These are the clustering stage of a pipeline: the feature extractor half
//! lives outside this crate, in whatever produced the feature store.

mod agglomerative;
mod kmeans;

pub use agglomerative::agglomerative;
pub use kmeans::kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ViewRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
    #[error("point {index} has dimension {found}, expected {expected}")]
    MixedDimensions {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}

/// Row-major `n × dim` matrix of points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl PointMatrix {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self, ClusterError> {
        if dim == 0 || data.is_empty() {
            return Err(ClusterError::Empty);
        }
        if data.len() % dim != 0 {
            return Err(ClusterError::MixedDimensions {
                index: data.len() / dim,
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ClusterError> {
        let dim = rows.first().ok_or(ClusterError::Empty)?.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(ClusterError::MixedDimensions {
                    index: i,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Scales every row to unit Euclidean norm; zero rows are left alone.
    pub fn normalize_rows(&mut self) {
        for row in self.data.chunks_mut(self.dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    fn check(&self, k: usize) -> Result<(), ClusterError> {
        if k == 0 {
            return Err(ClusterError::ZeroK);
        }
        if k > self.n() {
            return Err(ClusterError::TooManyClusters { k, n: self.n() });
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(i / self.dim));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster labels, one per input point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Renumbers labels by order of first appearance.
    pub(crate) fn canonical(labels: &[usize], k: usize) -> Self {
        let mut map = vec![usize::MAX; labels.iter().max().map_or(0, |m| m + 1)];
        let mut next = 0;
        let labels = labels
            .iter()
            .map(|&l| {
                if map[l] == usize::MAX {
                    map[l] = next;
                    next += 1;
                }
                map[l]
            })
            .collect();
        Self { labels, k }
    }

    /// Number of distinct labels actually used.
    pub fn n_nonempty(&self) -> usize {
        let mut seen = vec![false; self.k.max(self.labels.iter().max().map_or(0, |m| m + 1))];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    Agglomerative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Average,
    Ward,
    Complete,
}

/// Clustering stage of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub algorithm: Algorithm,
    /// Only used by agglomerative clustering.
    pub linkage: Linkage,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
    /// L2-normalize feature vectors before clustering.
    pub normalize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Agglomerative,
            linkage: Linkage::Average,
            kmeans_restarts: 10,
            kmeans_max_iters: 300,
            seed: 0,
            normalize: false,
        }
    }
}

impl PipelineConfig {
    pub fn agglomerative(linkage: Linkage) -> Self {
        Self {
            algorithm: Algorithm::Agglomerative,
            linkage,
            ..Self::default()
        }
    }

    pub fn kmeans(seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Kmeans,
            seed,
            ..Self::default()
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kmeans_restarts == 0 {
            out.push("kmeans_restarts must be >= 1".to_string());
        }
        if self.kmeans_max_iters == 0 {
            out.push("kmeans_max_iters must be >= 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ClusterError::InvalidConfig(v.join("; ")))
        }
    }

    /// Clusters an already assembled point matrix.
    pub fn run(&self, points: &PointMatrix, k: usize) -> Result<ClusterAssignment, ClusterError> {
        self.validate()?;
        match self.algorithm {
            Algorithm::Kmeans => kmeans(points, k, self),
            Algorithm::Agglomerative => agglomerative(points, k, self),
        }
    }
}

/// Clusters the feature vectors of `views` into `k` groups.
pub fn cluster_views(
    views: &[&ViewRecord],
    k: usize,
    cfg: &PipelineConfig,
) -> Result<ClusterAssignment, ClusterError> {
    let dim = views.first().ok_or(ClusterError::Empty)?.features.len();
    let mut data = Vec::with_capacity(views.len() * dim);
    for (i, v) in views.iter().enumerate() {
        if v.features.len() != dim {
            return Err(ClusterError::MixedDimensions {
                index: i,
                expected: dim,
                found: v.features.len(),
            });
        }
        data.extend(v.features.iter().map(|&x| x as f64));
    }
    let mut points = PointMatrix::new(data, dim)?;
    if cfg.normalize {
        points.normalize_rows();
    }
    cfg.run(&points, k)
}
