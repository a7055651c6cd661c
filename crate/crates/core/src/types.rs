//! Dense matrix types shared by every stage of the association engine.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a smaller Euclidean norm are rejected by [`l2_normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Tolerance used when validating that label rows are distributions.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Visible => Modality::Infrared,
            Modality::Infrared => Modality::Visible,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Visible => "v",
            Modality::Infrared => "r",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Visible => f.write_str("visible"),
            Modality::Infrared => f.write_str("infrared"),
        }
    }
}

/// N×d matrix of unit-norm instance features for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    modality: Modality,
}

impl FeatureMatrix {
    /// Normalizes `raw` and tags it with `modality`.
    pub fn new(raw: Array2<f64>, modality: Modality) -> Result<Self> {
        l2_normalize_rows(raw, modality)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Rows `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select(Axis(0), indices),
            modality: self.modality,
        }
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Divides every row of `raw` by its Euclidean norm.
pub fn l2_normalize_rows(mut raw: Array2<f64>, modality: Modality) -> Result<FeatureMatrix> {
    if raw.nrows() == 0 || raw.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "feature matrix must be non-empty, got {}x{}",
            raw.nrows(),
            raw.ncols()
        )));
    }
    for ((i, j), v) in raw.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i, j));
        }
    }
    for (i, mut row) in raw.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < MIN_ROW_NORM {
            return Err(Error::ZeroRow(i));
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(FeatureMatrix {
        data: raw,
        modality,
    })
}

/// N×K row-stochastic matrix of soft pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    probs: Array2<f64>,
}

impl SoftLabelMatrix {
    /// Validates that every row is a probability distribution.
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() == 0 {
            return Err(Error::InvalidInput("label space must have K >= 1".into()));
        }
        for (i, row) in probs.outer_iter().enumerate() {
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(Error::NonFinite(i, j));
                }
                if !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(&p) {
                    return Err(Error::InvalidInput(format!(
                        "label entry ({i}, {j}) = {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("label row {i} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_trusted(probs: Array2<f64>) -> Self {
        debug_assert!(probs
            .outer_iter()
            .all(|r| (r.sum() - 1.0).abs() <= ROW_SUM_TOL));
        Self { probs }
    }

    /// One-hot rows for the given hard labels.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut probs = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, k });
            }
            probs[[i, l]] = 1.0;
        }
        Ok(Self { probs })
    }

    /// Every row equal to the uniform distribution over `k` classes.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            probs: Array2::from_elem((n, k), 1.0 / k as f64),
        }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn space_size(&self) -> usize {
        self.probs.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.probs
            .outer_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-instance hard labels; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardLabelVector {
    labels: Vec<Option<usize>>,
    k: usize,
}

impl HardLabelVector {
    pub fn new(labels: Vec<Option<usize>>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().flatten().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, k });
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Indices of non-noise instances, ascending.
    pub fn members(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

pub fn hard_from_soft(y: &SoftLabelMatrix) -> HardLabelVector {
    HardLabelVector {
        labels: y.probs.outer_iter().map(|r| Some(argmax(r))).collect(),
        k: y.space_size(),
    }
}
