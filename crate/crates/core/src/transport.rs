//! Entropic optimal transport and the two places it is used: instance-level
//! heterogeneous affinity and the balanced initial cross-modality labels.
//!
//! The solver works on log potentials `(f, g)` with
//! `plan_ij = exp(f_i + g_j - lambda * cost_ij)`, which is the
//! `diag(u) exp(-lambda C) diag(v)` scaling form with `u = e^f`, `v = e^g`.
//! Alternating log-sum-exp updates are run first. Their linear rate collapses
//! once `lambda * cost` spans tens of nats, so after a warm-up the iteration
//! switches to damped Newton steps on the dual, each followed by one
//! alternating sweep. Both routes share the same fixed point.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::affinity::{row_normalize, AffinityKind, AffinityMatrix};
use crate::clustering::MemoryBank;
use crate::config::PipelineConfig;
use crate::distance::pairwise_squared_euclidean;
use crate::error::{Error, Result};
use crate::types::{argmax, FeatureMatrix, Modality, SoftLabelMatrix};

const MARGINAL_SUM_TOL: f64 = 1e-9;
const WARMUP_SWEEPS: usize = 50;
/// Plain sweeps to run after a rejected Newton step before trying again.
const NEWTON_PAUSE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornSettings {
    /// Target max L1 marginal error.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 10_000,
        }
    }
}

impl SinkhornSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            tol: cfg.sinkhorn_tol,
            max_iters: cfg.sinkhorn_max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    pub cost: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl TransportProblem {
    /// Uniform marginals over rows and columns of `cost`.
    pub fn uniform(cost: Array2<f64>, lambda: f64, settings: SinkhornSettings) -> Self {
        let (r, c) = cost.dim();
        Self {
            row_marginal: Array1::from_elem(r, 1.0 / r as f64),
            col_marginal: Array1::from_elem(c, 1.0 / c as f64),
            cost,
            lambda,
            max_iters: settings.max_iters,
            tol: settings.tol,
        }
    }

    fn validate(&self) -> Result<()> {
        let (r, c) = self.cost.dim();
        if r == 0 || c == 0 {
            return Err(Error::InvalidInput("empty transport problem".into()));
        }
        if self.row_marginal.len() != r || self.col_marginal.len() != c {
            return Err(Error::shape(format!(
                "cost is {r}x{c} but marginals have lengths {} and {}",
                self.row_marginal.len(),
                self.col_marginal.len()
            )));
        }
        for ((i, j), &v) in self.cost.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i, j));
            }
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("negative cost at ({i}, {j})")));
            }
        }
        for (name, m) in [("row", &self.row_marginal), ("column", &self.col_marginal)] {
            if m.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} marginal has a negative entry")));
            }
            if (m.sum() - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "{name} marginal sums to {}",
                    m.sum()
                )));
            }
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput("lambda must be finite and > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub iterations_used: usize,
    /// `max(|P 1 - a|_1, |P^T 1 - b|_1)`.
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        (&self.plan * cost).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Solver<'a> {
    log_kernel: &'a Array2<f64>,
    log_a: Array1<f64>,
    log_b: Array1<f64>,
    a: ArrayView1<'a, f64>,
    b: ArrayView1<'a, f64>,
}

impl Solver<'_> {
    fn sweep(&self, f: &mut Array1<f64>, g: &mut Array1<f64>) {
        for (i, fi) in f.iter_mut().enumerate() {
            let row = self.log_kernel.row(i);
            *fi = self.log_a[i] - log_sum_exp(row.iter().zip(g.iter()).map(|(k, gj)| k + gj));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let col = self.log_kernel.column(j);
            *gj = self.log_b[j] - log_sum_exp(col.iter().zip(f.iter()).map(|(k, fi)| k + fi));
        }
    }

    fn plan(&self, f: &Array1<f64>, g: &Array1<f64>) -> Array2<f64> {
        let mut p = self.log_kernel.clone();
        for ((i, j), v) in p.indexed_iter_mut() {
            *v = (*v + f[i] + g[j]).exp();
        }
        p
    }

    fn error(&self, plan: &Array2<f64>) -> f64 {
        let r = plan.sum_axis(Axis(1));
        let c = plan.sum_axis(Axis(0));
        let er: f64 = r.iter().zip(self.a.iter()).map(|(x, y)| (x - y).abs()).sum();
        let ec: f64 = c.iter().zip(self.b.iter()).map(|(x, y)| (x - y).abs()).sum();
        let e = er.max(ec);
        if e.is_nan() {
            f64::INFINITY
        } else {
            e
        }
    }

    /// Newton direction for the dual, eliminating the larger block.
    fn newton_direction(&self, plan: &Array2<f64>) -> Option<(Array1<f64>, Array1<f64>)> {
        let r = plan.sum_axis(Axis(1));
        let c = plan.sum_axis(Axis(0));
        if r.iter().chain(c.iter()).any(|&x| !(x > 0.0)) {
            return None;
        }
        let ga = &self.a - &r;
        let gb = &self.b - &c;
        if plan.nrows() >= plan.ncols() {
            let (dg, df) = schur_solve(plan, &r, &c, &ga, &gb)?;
            Some((df, dg))
        } else {
            let pt = plan.t().to_owned();
            schur_solve(&pt, &c, &r, &gb, &ga)
        }
    }
}

/// Solves `[[diag r, P], [P^T, diag c]] [x; y] = [ga; gb]` with `y_last = 0`,
/// eliminating `x`. Returns `(y, x)`.
fn schur_solve(
    plan: &Array2<f64>,
    r: &Array1<f64>,
    c: &Array1<f64>,
    ga: &Array1<f64>,
    gb: &Array1<f64>,
) -> Option<(Array1<f64>, Array1<f64>)> {
    let m = plan.ncols();
    let mut y = Array1::<f64>::zeros(m);
    if m > 1 {
        let scaled = plan / &r.view().insert_axis(Axis(1));
        let inner = plan.t().dot(&scaled);
        let rhs_full = gb - &plan.t().dot(&(ga / r));
        let size = m - 1;
        let mut schur = DMatrix::<f64>::zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                schur[(i, j)] = -inner[[i, j]] + if i == j { c[i] } else { 0.0 };
            }
        }
        let rhs = DVector::from_iterator(size, rhs_full.iter().take(size).copied());
        // near-disconnected plans make the system close to singular; a small
        // relative ridge keeps the factorization usable
        let scale = schur.trace() / size as f64;
        let mut ridge = 1e-12 * scale;
        let mut sol = None;
        for _ in 0..4 {
            let mut regularized = schur.clone();
            for i in 0..size {
                regularized[(i, i)] += ridge;
            }
            if let Some(ch) = regularized.cholesky() {
                sol = Some(ch.solve(&rhs));
                break;
            }
            ridge *= 100.0;
        }
        let sol = match sol {
            Some(s) => s,
            None => schur.lu().solve(&rhs)?,
        };
        for i in 0..size {
            y[i] = sol[i];
        }
    }
    let x = (ga - &plan.dot(&y)) / r;
    if x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        Some((y, x))
    } else {
        None
    }
}

/// Solves the entropic OT problem in log domain.
///
/// Rows or columns with zero marginal mass are removed before solving and get
/// zero plan entries. Returns `NotConverged` (carrying the plan) when
/// `max_iters` is exhausted with an error above `10 * tol`.
pub fn sinkhorn(p: &TransportProblem) -> Result<TransportPlan> {
    p.validate()?;
    let rows: Vec<usize> = (0..p.row_marginal.len()).filter(|&i| p.row_marginal[i] > 0.0).collect();
    let cols: Vec<usize> = (0..p.col_marginal.len()).filter(|&j| p.col_marginal[j] > 0.0).collect();
    let a = p.row_marginal.select(Axis(0), &rows);
    let b = p.col_marginal.select(Axis(0), &cols);
    let log_kernel = p
        .cost
        .select(Axis(0), &rows)
        .select(Axis(1), &cols)
        .mapv(|c| -p.lambda * c);
    let solver = Solver {
        log_kernel: &log_kernel,
        log_a: a.mapv(f64::ln),
        log_b: b.mapv(f64::ln),
        a: a.view(),
        b: b.view(),
    };

    let mut f = Array1::<f64>::zeros(rows.len());
    let mut g = Array1::<f64>::zeros(cols.len());
    let mut plan = solver.plan(&f, &g);
    let mut error = solver.error(&plan);
    let mut iters = 0;
    let mut newton_pause = 0;
    while error >= p.tol && iters < p.max_iters {
        iters += 1;
        if iters > WARMUP_SWEEPS && newton_pause == 0 {
            let mut accepted = false;
            if let Some((df, dg)) = solver.newton_direction(&plan) {
                let mut step = 1.0;
                while step > 1e-8 {
                    let fc = &f + &(&df * step);
                    let gc = &g + &(&dg * step);
                    if solver.error(&solver.plan(&fc, &gc)) < error {
                        f = fc;
                        g = gc;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
            }
            if !accepted {
                newton_pause = NEWTON_PAUSE;
            }
        }
        newton_pause = newton_pause.saturating_sub(1);
        solver.sweep(&mut f, &mut g);
        if f.iter().chain(g.iter()).any(|v| v.is_nan()) {
            return Err(Error::SinkhornNonFinite);
        }
        plan = solver.plan(&f, &g);
        error = solver.error(&plan);
    }

    let mut full = Array2::zeros(p.cost.dim());
    for (ri, &i) in rows.iter().enumerate() {
        for (ci, &j) in cols.iter().enumerate() {
            full[[i, j]] = plan[[ri, ci]];
        }
    }
    let result = TransportPlan {
        plan: full,
        iterations_used: iters,
        marginal_error: error,
    };
    if error > 10.0 * p.tol {
        return Err(Error::NotConverged {
            error,
            plan: Box::new(result),
        });
    }
    Ok(result)
}

/// Plan of the uniform-marginal problem between two feature sets, together
/// with its row-normalized forms in both directions.
#[derive(Debug, Clone)]
pub struct HeterogeneousAffinity {
    /// Unnormalized plan, source rows by target columns.
    pub plan: TransportPlan,
    /// Source-to-target affinity.
    pub forward: AffinityMatrix,
    /// Target-to-source affinity (normalized transpose).
    pub backward: AffinityMatrix,
}

fn hetero_kinds(source: Modality) -> (AffinityKind, AffinityKind) {
    match source {
        Modality::Visible => (AffinityKind::HeteroVR, AffinityKind::HeteroRV),
        Modality::Infrared => (AffinityKind::HeteroRV, AffinityKind::HeteroVR),
    }
}

/// Entropic OT between `source` and `target` over squared Euclidean cost,
/// each instance carrying equal mass.
pub fn heterogeneous_affinity(
    source: &FeatureMatrix,
    target: &FeatureMatrix,
    lambda: f64,
    settings: SinkhornSettings,
) -> Result<HeterogeneousAffinity> {
    if source.dim() != target.dim() {
        return Err(Error::shape(format!(
            "feature dimensions differ: {} vs {}",
            source.dim(),
            target.dim()
        )));
    }
    let cost = pairwise_squared_euclidean(source.view(), target.view());
    let plan = sinkhorn(&TransportProblem::uniform(cost, lambda, settings))?;
    let (fwd_kind, bwd_kind) = hetero_kinds(source.modality());
    let forward = row_normalize(AffinityMatrix::new(plan.plan.clone(), fwd_kind));
    let backward = row_normalize(AffinityMatrix::new(plan.plan.t().to_owned(), bwd_kind));
    Ok(HeterogeneousAffinity {
        plan,
        forward,
        backward,
    })
}

/// Balanced assignment plan of `features` onto the prototypes of `bank`:
/// uniform mass over instances and over clusters.
pub fn otla_plan(
    features: &FeatureMatrix,
    bank: &MemoryBank,
    lambda: f64,
    settings: SinkhornSettings,
) -> Result<TransportPlan> {
    if bank.k() == 0 {
        return Err(Error::InvalidInput("memory bank is empty".into()));
    }
    if features.dim() != bank.dim() {
        return Err(Error::shape(format!(
            "feature dimension {} vs prototype dimension {}",
            features.dim(),
            bank.dim()
        )));
    }
    let cost = pairwise_squared_euclidean(features.view(), bank.prototypes.view());
    sinkhorn(&TransportProblem::uniform(cost, lambda, settings))
}

/// One-hot labels from the row-wise argmax of [`otla_plan`].
pub fn otla_init(
    features: &FeatureMatrix,
    bank: &MemoryBank,
    lambda: f64,
    settings: SinkhornSettings,
) -> Result<SoftLabelMatrix> {
    let plan = otla_plan(features, bank, lambda, settings)?;
    let labels: Vec<usize> = plan.plan.outer_iter().map(argmax).collect();
    SoftLabelMatrix::one_hot(&labels, bank.k())
}
