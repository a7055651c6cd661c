//! Homogeneous affinity from k-reciprocal neighbor sets, and row
//! normalization for every affinity kind.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::distance::pairwise_squared_euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    HomogeneousV,
    HomogeneousR,
    HeteroVR,
    HeteroRV,
}

impl AffinityKind {
    pub fn is_homogeneous(self) -> bool {
        matches!(self, AffinityKind::HomogeneousV | AffinityKind::HomogeneousR)
    }
}

/// Nonnegative rows×cols affinity; row-stochastic once normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: Array2<f64>,
    pub kind: AffinityKind,
}

impl AffinityMatrix {
    pub fn new(values: Array2<f64>, kind: AffinityKind) -> Self {
        Self { values, kind }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .outer_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Indices of the `kappa` nearest rows to `i` (itself first), ties by index.
fn nearest(dist: &Array2<f64>, i: usize, kappa: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.ncols()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
    let mut out = Vec::with_capacity(kappa);
    out.push(i);
    out.extend(order.into_iter().take(kappa.saturating_sub(1)));
    out.sort_unstable();
    out
}

/// Mutual-kNN sets: `j` is in `R(i)` iff each is among the other's `kappa`
/// nearest neighbors. Every point counts itself as its first neighbor, so
/// `i` is always in `R(i)`. Returned sets are sorted ascending.
pub fn k_reciprocal_sets(points: ArrayView2<'_, f64>, kappa: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    assert!(kappa >= 1 && kappa <= n, "kappa must lie in [1, N]");
    let dist = pairwise_squared_euclidean(points, points);
    let knn: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(&dist, i, kappa))
        .collect();
    (0..n)
        .map(|i| {
            knn[i]
                .iter()
                .copied()
                .filter(|&j| knn[j].binary_search(&i).is_ok())
                .collect()
        })
        .collect()
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// `S_ij = |R_i ∩ R_j| / |R_i ∪ R_j|` over sorted, non-empty sets.
pub fn jaccard_affinity(sets: &[Vec<usize>]) -> Array2<f64> {
    let n = sets.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let inter = intersection_size(&sets[i], &sets[j]);
                    let union = sets[i].len() + sets[j].len() - inter;
                    inter as f64 / union as f64
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Jaccard affinity over reciprocal sets, not yet normalized.
pub fn homogeneous_affinity(points: ArrayView2<'_, f64>, kappa: usize, kind: AffinityKind) -> AffinityMatrix {
    let kappa = kappa.clamp(1, points.nrows());
    AffinityMatrix::new(jaccard_affinity(&k_reciprocal_sets(points, kappa)), kind)
}

/// Divides each row by its sum. A zero row becomes the self row for
/// homogeneous kinds and the uniform row for heterogeneous kinds.
pub fn row_normalize(mut a: AffinityMatrix) -> AffinityMatrix {
    let cols = a.cols();
    let homogeneous = a.kind.is_homogeneous();
    for (i, mut row) in a.values.outer_iter_mut().enumerate() {
        let sum = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|x| x / sum);
        } else if homogeneous && i < cols {
            row.fill(0.0);
            row[i] = 1.0;
        } else {
            row.fill(1.0 / cols as f64);
        }
    }
    a
}
