//! Grouping a trace's step embeddings into latent reasoning types.
//!
//! Clustering is per response. Both methods are deterministic for fixed
//! inputs and seed, and both return compacted labels: every id in `[0, K)`
//! has at least one member.

mod hdbscan;
mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::StepEmbedding;

pub use hdbscan::{hdbscan, hdbscan_fit, HdbscanFit, HdbscanParams};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    #[default]
    KMeans,
    Hdbscan,
}

impl std::str::FromStr for ClusterMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(Self::KMeans),
            "hdbscan" => Ok(Self::Hdbscan),
            other => Err(format!(
                "unknown clustering method `{other}` (expected kmeans|hdbscan)"
            )),
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::KMeans => "kmeans",
            Self::Hdbscan => "hdbscan",
        })
    }
}

/// What HDBSCAN noise points become.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePolicy {
    /// All noise points form one extra cluster.
    #[default]
    Merged,
    /// Each noise point becomes its own cluster.
    Singletons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Lower clamp for the automatic k choice (m ≥ 2).
    pub k_floor: usize,
    /// Overrides the automatic k choice for KMeans (clamped to the number
    /// of points).
    pub fixed_k: Option<usize>,
    pub noise_policy: NoisePolicy,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::KMeans,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-9,
            seed: 0,
            k_floor: 2,
            fixed_k: None,
            noise_policy: NoisePolicy::Merged,
        }
    }
}

impl ClusterConfig {
    pub fn with_method(method: ClusterMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.kmeans_max_iter == 0 {
            return Err(ClusterError::InvalidConfig(
                "kmeans_max_iter must be >= 1".into(),
            ));
        }
        if self.kmeans_tol.is_nan() || self.kmeans_tol <= 0.0 {
            return Err(ClusterError::InvalidConfig("kmeans_tol must be > 0".into()));
        }
        if self.fixed_k == Some(0) {
            return Err(ClusterError::InvalidConfig("fixed_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step latent type labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub method: ClusterMethod,
    pub seed: u64,
}

impl ClusterAssignment {
    /// Builds an assignment from arbitrary non-negative ids, compacting them
    /// to `[0, K)` in order of first occurrence.
    pub fn from_raw_labels(raw: &[usize], method: ClusterMethod, seed: u64) -> Self {
        let (labels, k) = compact_first_occurrence(raw);
        Self {
            labels,
            k,
            method,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member count of each cluster id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Checks the labelling invariants: ids in range and none empty.
    pub fn is_valid(&self) -> bool {
        self.labels.iter().all(|&l| l < self.k) && self.sizes().iter().all(|&s| s > 0)
    }
}

/// Relabels ids by order of first appearance. Returns the labels and K.
pub fn compact_first_occurrence(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let labels = raw
        .iter()
        .map(|&r| {
            let next = map.len();
            *map.entry(r).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("k = {k} is outside [1, {n}]")]
    InvalidK { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
}

/// `clamp(round(√m), 2, m)` for m ≥ 2, and 1 for m = 1.
pub fn choose_k(m: usize) -> Result<usize, ClusterError> {
    choose_k_with_floor(m, 2)
}

pub fn choose_k_with_floor(m: usize, floor: usize) -> Result<usize, ClusterError> {
    match m {
        0 => Err(ClusterError::EmptyInput),
        1 => Ok(1),
        _ => {
            let k = (m as f64).sqrt().round() as usize;
            Ok(k.clamp(floor.clamp(1, m), m))
        }
    }
}

pub(crate) fn check_dims<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusterError> {
    let first = points
        .first()
        .ok_or(ClusterError::EmptyInput)?
        .as_ref()
        .len();
    for (index, p) in points.iter().enumerate() {
        let found = p.as_ref().len();
        if found != first {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: first,
                found,
            });
        }
    }
    Ok(first)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters one trace's embeddings with the configured method. KMeans uses
/// `choose_k(T)` unless `fixed_k` is set.
pub fn cluster_trace(
    embeddings: &[StepEmbedding],
    cfg: &ClusterConfig,
) -> Result<ClusterAssignment, ClusterError> {
    cfg.validate()?;
    if embeddings.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
    match cfg.method {
        ClusterMethod::KMeans => {
            let k = match cfg.fixed_k {
                Some(k) => k.min(points.len()),
                None => choose_k_with_floor(points.len(), cfg.k_floor)?,
            };
            kmeans(&points, k, cfg)
        }
        ClusterMethod::Hdbscan => hdbscan(&points, cfg),
    }
}
