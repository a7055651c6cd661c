//! Density clustering of one modality and memory-bank construction.
//!
//! DBSCAN scans instances in index order; cluster ids are handed out in the
//! order their first core point is met, so the labeling is a deterministic
//! function of the input order. Noise instances receive no label and take no
//! part in centroid computation.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::affinity::{jaccard_affinity, k_reciprocal_sets};
use crate::config::{ClusterMetric, PipelineConfig};
use crate::distance::pairwise_squared_euclidean;
use crate::error::{Error, Result};
use crate::types::{FeatureMatrix, HardLabelVector, Modality};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: HardLabelVector,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.labels.k()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self) -> Vec<usize> {
        self.labels.members()
    }

    /// Cluster sizes indexed by cluster id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for l in self.labels.labels().iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }
}

/// Distance used for the neighborhood query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    /// Jaccard distance between k-reciprocal neighbor sets.
    JaccardDistance { kappa: usize },
}

impl Metric {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        match cfg.dbscan_metric {
            ClusterMetric::Euclidean => Metric::Euclidean,
            ClusterMetric::JaccardDistance => Metric::JaccardDistance { kappa: cfg.kappa },
        }
    }
}

fn distance_matrix(points: ArrayView2<'_, f64>, metric: Metric) -> Array2<f64> {
    match metric {
        Metric::Euclidean => pairwise_squared_euclidean(points, points).mapv(f64::sqrt),
        Metric::JaccardDistance { kappa } => {
            let kappa = kappa.clamp(1, points.nrows().max(1));
            let sets = k_reciprocal_sets(points, kappa);
            jaccard_affinity(&sets).mapv(|s| 1.0 - s)
        }
    }
}

/// DBSCAN over the rows of `points`. Neighborhoods are closed balls
/// (`dist <= eps`) and include the point itself.
pub fn dbscan(
    points: ArrayView2<'_, f64>,
    eps: f64,
    min_samples: usize,
    metric: Metric,
) -> Result<ClusterAssignment> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("dbscan eps must be > 0".into()));
    }
    if min_samples < 1 {
        return Err(Error::InvalidInput("dbscan min_samples must be >= 1".into()));
    }
    let n = points.nrows();
    let dist = distance_matrix(points, metric);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[[i, j]] <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut k = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if labels[seed].is_some() || !is_core[seed] {
            continue;
        }
        let id = k;
        k += 1;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(ClusterAssignment {
        labels: HardLabelVector::new(labels, k)?,
    })
}

/// Runs DBSCAN with the settings in `cfg`.
pub fn cluster_features(features: &FeatureMatrix, cfg: &PipelineConfig) -> Result<ClusterAssignment> {
    dbscan(
        features.view(),
        cfg.dbscan_eps,
        cfg.dbscan_min_samples,
        Metric::from_config(cfg),
    )
}

/// K×d unit-norm prototypes with the temperature and momentum used with them.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub prototypes: Array2<f64>,
    pub tau: f64,
    pub mu: f64,
    /// Modality whose label space the prototypes index.
    pub space: Modality,
}

impl MemoryBank {
    /// Normalizes `prototypes` row-wise.
    pub fn new(prototypes: Array2<f64>, tau: f64, mu: f64, space: Modality) -> Result<Self> {
        let normalized = crate::types::l2_normalize_rows(prototypes, space)?;
        Ok(Self {
            prototypes: normalized.into_inner(),
            tau,
            mu,
            space,
        })
    }

    pub fn k(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// Softmax over `f . c_j / tau` with the bank's own temperature.
    pub fn probability(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        memory_probability(f, self, self.tau)
    }
}

/// Prototype j is the normalized mean of the members of cluster j.
pub fn centroids(
    features: &FeatureMatrix,
    assign: &ClusterAssignment,
    tau: f64,
    mu: f64,
) -> Result<MemoryBank> {
    if assign.len() != features.len() {
        return Err(Error::shape(format!(
            "{} labels for {} features",
            assign.len(),
            features.len()
        )));
    }
    let k = assign.k();
    if k == 0 {
        return Err(Error::InvalidInput("no clusters to build a memory bank from".into()));
    }
    let mut sums = Array2::<f64>::zeros((k, features.dim()));
    let mut counts = vec![0usize; k];
    for (i, label) in assign.labels.labels().iter().enumerate() {
        if let Some(c) = *label {
            sums.row_mut(c).scaled_add(1.0, &features.row(i));
            counts[c] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    for (mut row, &c) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        row.mapv_inplace(|x| x / c as f64);
    }
    MemoryBank::new(sums, tau, mu, features.modality())
}

/// `P_j = exp(f . c_j / tau) / sum_k exp(f . c_k / tau)`, max-subtracted.
pub fn memory_probability(f: ArrayView1<'_, f64>, bank: &MemoryBank, tau: f64) -> Array1<f64> {
    let logits = bank.prototypes.dot(&f) / tau;
    softmax(logits)
}

pub(crate) fn softmax(mut logits: Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    logits.mapv_inplace(|x| (x - max).exp());
    let total = logits.sum();
    logits / total
}
