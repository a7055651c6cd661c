use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance used by DBSCAN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMetric {
    #[default]
    Euclidean,
    /// `1 - Jaccard` over k-reciprocal neighbor sets of size `kappa`.
    JaccardDistance,
}

/// How the cross-label update reads the intra labels inside one transfer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Cross update consumes the intra labels of iteration t.
    #[default]
    Jacobi,
    /// Cross update consumes the freshly updated intra labels.
    GaussSeidel,
}

/// Where the homogeneous propagation is applied inside a transfer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Mix heterogeneous and initial labels, then average the mix with its
    /// homogeneous propagation.
    #[default]
    Propagate,
    /// `y <- 1/2 S_ho y(t) + 1/2 [(1-a) S_he y_other(t) + a y(0)]`: the fixed
    /// point iteration of the zero-gradient condition of the inconsistency.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Memory-bank softmax temperature.
    pub tau: f64,
    /// Momentum factor; weights the old prototype.
    pub mu: f64,
    /// Reciprocal neighbor size.
    pub kappa: usize,
    /// Entropic OT weight; the regularizer is `1/lambda`.
    pub lambda: f64,
    /// Self-inconsistency trade-off.
    pub alpha: f64,
    /// Hard/soft label fusion weight.
    pub beta: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub dbscan_metric: ClusterMetric,
    /// Transfer stops once the per-step L1 change drops to this value.
    pub epsilon0: f64,
    pub max_transfer_iters: usize,
    pub update_order: UpdateOrder,
    pub update_rule: UpdateRule,
    pub sharpen_divisor: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    pub batch_size: usize,
    /// Count i == j pairs in intra-modality pair metrics.
    pub include_self_pairs: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            mu: 0.1,
            kappa: 30,
            lambda: 25.0,
            alpha: 0.2,
            beta: 0.7,
            dbscan_eps: 0.6,
            dbscan_min_samples: 4,
            dbscan_metric: ClusterMetric::Euclidean,
            epsilon0: 1e-2,
            max_transfer_iters: 100,
            update_order: UpdateOrder::Jacobi,
            update_rule: UpdateRule::Propagate,
            sharpen_divisor: 5.0,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iters: 10_000,
            batch_size: 144,
            include_self_pairs: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if self.kappa < 1 {
            return bad("kappa must be >= 1");
        }
        if !(self.epsilon0 > 0.0) {
            return bad("epsilon0 must be > 0");
        }
        if !(self.dbscan_eps > 0.0) {
            return bad("dbscan_eps must be > 0");
        }
        if self.dbscan_min_samples < 1 {
            return bad("dbscan_min_samples must be >= 1");
        }
        if !(self.sharpen_divisor >= 1.0) {
            return bad("sharpen_divisor must be >= 1");
        }
        if !(self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol must be > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Reads a JSON object whose keys override the defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
