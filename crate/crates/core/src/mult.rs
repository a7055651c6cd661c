//! Modality-unified label transfer.
//!
//! For one direction the source modality owns the label space. Source
//! instances carry intra labels (softmax against the source memory bank) and
//! target instances carry cross labels (balanced OT assignment onto the same
//! bank). Each step mixes a label set with the other modality's labels through
//! the heterogeneous affinity, anchors it to its initial value with weight
//! `alpha`, and averages the result with its homogeneous propagation. The
//! loop stops once the larger L1 change of the two label sets drops to
//! `epsilon0`; the converged labels are then fused with their one-hot argmax.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::affinity::{homogeneous_affinity, row_normalize, AffinityKind, AffinityMatrix};
use crate::clustering::{centroids, memory_probability, ClusterAssignment, MemoryBank};
use crate::config::{PipelineConfig, UpdateOrder, UpdateRule};
use crate::error::{Error, Result};
use crate::labels::{Association, Direction, LabelQuartet, ModalityLabels};
use crate::transport::{heterogeneous_affinity, otla_init, SinkhornSettings};
use crate::types::{argmax, FeatureMatrix, Modality, SoftLabelMatrix};

/// Entries below this are zeroed after every step.
pub const LABEL_FLOOR: f64 = 1e-12;

/// Initial step size, larger than any reachable L1 change.
const INITIAL_EPSILON: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon0: f64,
    pub max_iters: usize,
    pub direction: Direction,
    pub order: UpdateOrder,
    pub rule: UpdateRule,
}

impl TransferConfig {
    pub fn from_pipeline(cfg: &PipelineConfig, direction: Direction) -> Self {
        Self {
            alpha: cfg.alpha,
            beta: cfg.beta,
            epsilon0: cfg.epsilon0,
            max_iters: cfg.max_transfer_iters,
            direction,
            order: cfg.update_order,
            rule: cfg.update_rule,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig("alpha and beta must lie in [0, 1]".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::InvalidConfig("epsilon0 must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferState {
    /// Source instances, source label space.
    pub intra: SoftLabelMatrix,
    /// Target instances, source label space.
    pub cross: SoftLabelMatrix,
    pub intra0: SoftLabelMatrix,
    pub cross0: SoftLabelMatrix,
    pub t: usize,
    /// Larger L1 change of the last step.
    pub epsilon: f64,
}

impl TransferState {
    /// A state at `t = 0` whose working labels equal the initial ones.
    pub fn new(intra0: SoftLabelMatrix, cross0: SoftLabelMatrix) -> Result<Self> {
        if intra0.space_size() != cross0.space_size() {
            return Err(Error::shape(format!(
                "intra labels have K = {}, cross labels K = {}",
                intra0.space_size(),
                cross0.space_size()
            )));
        }
        Ok(Self {
            intra: intra0.clone(),
            cross: cross0.clone(),
            intra0,
            cross0,
            t: 0,
            epsilon: INITIAL_EPSILON,
        })
    }

    pub fn space_size(&self) -> usize {
        self.intra.space_size()
    }
}

/// Row-normalized affinities for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferAffinities {
    /// Source × source.
    pub ho_src: AffinityMatrix,
    /// Target × target.
    pub ho_tgt: AffinityMatrix,
    /// Source × target.
    pub he_st: AffinityMatrix,
    /// Target × source.
    pub he_ts: AffinityMatrix,
}

impl TransferAffinities {
    fn check(&self, state: &TransferState) -> Result<()> {
        let ns = state.intra.len();
        let nt = state.cross.len();
        let expect = [
            ("source homogeneous", &self.ho_src, ns, ns),
            ("target homogeneous", &self.ho_tgt, nt, nt),
            ("source-target heterogeneous", &self.he_st, ns, nt),
            ("target-source heterogeneous", &self.he_ts, nt, ns),
        ];
        for (name, a, r, c) in expect {
            if a.values.dim() != (r, c) {
                return Err(Error::shape(format!(
                    "{name} affinity is {:?}, expected ({r}, {c})",
                    a.values.dim()
                )));
            }
        }
        if state.intra0.len() != ns || state.cross0.len() != nt {
            return Err(Error::shape("initial labels do not match working labels"));
        }
        Ok(())
    }
}

/// Affinities between the given source and target instances.
pub fn build_affinities(
    source: &FeatureMatrix,
    target: &FeatureMatrix,
    cfg: &PipelineConfig,
) -> Result<TransferAffinities> {
    let kind = |m: Modality| match m {
        Modality::Visible => AffinityKind::HomogeneousV,
        Modality::Infrared => AffinityKind::HomogeneousR,
    };
    let ho_src = row_normalize(homogeneous_affinity(
        source.view(),
        cfg.kappa,
        kind(source.modality()),
    ));
    let ho_tgt = row_normalize(homogeneous_affinity(
        target.view(),
        cfg.kappa,
        kind(target.modality()),
    ));
    let he = heterogeneous_affinity(source, target, cfg.lambda, SinkhornSettings::from_config(cfg))?;
    Ok(TransferAffinities {
        ho_src,
        ho_tgt,
        he_st: he.forward,
        he_ts: he.backward,
    })
}

/// Initial labels: memory softmax for the source instances, balanced OT
/// one-hot assignment for the target instances.
pub fn init_labels(
    source: &FeatureMatrix,
    target: &FeatureMatrix,
    bank: &MemoryBank,
    cfg: &PipelineConfig,
) -> Result<TransferState> {
    if bank.k() == 0 {
        return Err(Error::InvalidInput("source memory bank is empty".into()));
    }
    if source.dim() != bank.dim() {
        return Err(Error::shape(format!(
            "feature dimension {} vs prototype dimension {}",
            source.dim(),
            bank.dim()
        )));
    }
    let mut intra0 = Array2::zeros((source.len(), bank.k()));
    for (i, mut row) in intra0.outer_iter_mut().enumerate() {
        row.assign(&memory_probability(source.row(i), bank, cfg.tau));
    }
    let cross0 = otla_init(target, bank, cfg.lambda, SinkhornSettings::from_config(cfg))?;
    TransferState::new(SoftLabelMatrix::from_trusted(intra0), cross0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub homogeneous_src: f64,
    pub homogeneous_tgt: f64,
    pub heterogeneous_src: f64,
    pub heterogeneous_tgt: f64,
    pub self_src: f64,
    pub self_tgt: f64,
    pub weighted_total: f64,
}

fn squared_distance_rows(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    Zip::from(a.row(i)).and(b.row(j)).fold(0.0, |acc, x, y| {
        let d = x - y;
        acc + d * d
    })
}

/// `sum_ij S_ij |a_i - b_j|^2`
fn weighted_pair_distance(s: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for ((i, j), &w) in s.indexed_iter() {
        if w != 0.0 {
            total += w * squared_distance_rows(a, i, b, j);
        }
    }
    total
}

fn self_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (0..a.nrows()).map(|i| squared_distance_rows(a, i, b, i)).sum()
}

/// Homogeneous, heterogeneous and self inconsistency of both label sets.
pub fn inconsistency(
    state: &TransferState,
    aff: &TransferAffinities,
    alpha: f64,
) -> Result<InconsistencyReport> {
    aff.check(state)?;
    let intra = state.intra.probs();
    let cross = state.cross.probs();
    let homogeneous_src = weighted_pair_distance(&aff.ho_src.values, intra, intra);
    let homogeneous_tgt = weighted_pair_distance(&aff.ho_tgt.values, cross, cross);
    let heterogeneous_src = weighted_pair_distance(&aff.he_st.values, intra, cross);
    let heterogeneous_tgt = weighted_pair_distance(&aff.he_ts.values, cross, intra);
    let self_src = self_distance(intra, state.intra0.probs());
    let self_tgt = self_distance(cross, state.cross0.probs());
    let weighted_total = homogeneous_src
        + alpha * self_src
        + (1.0 - alpha) * heterogeneous_src
        + homogeneous_tgt
        + alpha * self_tgt
        + (1.0 - alpha) * heterogeneous_tgt;
    Ok(InconsistencyReport {
        homogeneous_src,
        homogeneous_tgt,
        heterogeneous_src,
        heterogeneous_tgt,
        self_src,
        self_tgt,
        weighted_total,
    })
}

fn clamp_and_renormalize(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.outer_iter_mut() {
        row.mapv_inplace(|x| if x < LABEL_FLOOR { 0.0 } else { x });
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    m
}

fn l1_change(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).abs())
}

/// Updates one label set from the other modality's labels.
fn update(
    rule: UpdateRule,
    alpha: f64,
    ho: &Array2<f64>,
    he: &Array2<f64>,
    other: &Array2<f64>,
    current: &Array2<f64>,
    initial: &Array2<f64>,
) -> Array2<f64> {
    let mixed = he.dot(other) * (1.0 - alpha) + initial * alpha;
    let propagated = match rule {
        UpdateRule::Propagate => (ho.dot(&mixed) + &mixed) * 0.5,
        UpdateRule::Stationary => (ho.dot(current) + &mixed) * 0.5,
    };
    clamp_and_renormalize(propagated)
}

/// One alternating update of both label sets.
pub fn transfer_step(
    state: &TransferState,
    aff: &TransferAffinities,
    alpha: f64,
) -> Result<TransferState> {
    transfer_step_with(state, aff, alpha, UpdateOrder::Jacobi, UpdateRule::Propagate)
}

pub fn transfer_step_with(
    state: &TransferState,
    aff: &TransferAffinities,
    alpha: f64,
    order: UpdateOrder,
    rule: UpdateRule,
) -> Result<TransferState> {
    aff.check(state)?;
    let intra = state.intra.probs();
    let cross = state.cross.probs();
    let next_intra = update(
        rule,
        alpha,
        &aff.ho_src.values,
        &aff.he_st.values,
        cross,
        intra,
        state.intra0.probs(),
    );
    let intra_for_cross = match order {
        UpdateOrder::Jacobi => intra,
        UpdateOrder::GaussSeidel => &next_intra,
    };
    let next_cross = update(
        rule,
        alpha,
        &aff.ho_tgt.values,
        &aff.he_ts.values,
        intra_for_cross,
        cross,
        state.cross0.probs(),
    );
    let epsilon = l1_change(&next_intra, intra).max(l1_change(&next_cross, cross));
    Ok(TransferState {
        intra: SoftLabelMatrix::from_trusted(next_intra),
        cross: SoftLabelMatrix::from_trusted(next_cross),
        intra0: state.intra0.clone(),
        cross0: state.cross0.clone(),
        t: state.t + 1,
        epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub state: TransferState,
    /// True when `max_iters` stopped the loop before `epsilon0` was reached.
    pub capped: bool,
    /// Step size after each iteration.
    pub epsilons: Vec<f64>,
}

/// Steps until the change drops to `epsilon0` or `max_iters` is reached.
pub fn run_transfer(
    state: TransferState,
    aff: &TransferAffinities,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    run_transfer_observed(state, aff, cfg, |_| {})
}

/// As [`run_transfer`], calling `observe` on the initial state and after every step.
pub fn run_transfer_observed(
    mut state: TransferState,
    aff: &TransferAffinities,
    cfg: &TransferConfig,
    mut observe: impl FnMut(&TransferState),
) -> Result<TransferOutcome> {
    cfg.validate()?;
    aff.check(&state)?;
    observe(&state);
    let mut epsilons = Vec::new();
    while state.epsilon > cfg.epsilon0 && state.t < cfg.max_iters {
        state = transfer_step_with(&state, aff, cfg.alpha, cfg.order, cfg.rule)?;
        epsilons.push(state.epsilon);
        observe(&state);
    }
    Ok(TransferOutcome {
        capped: state.epsilon > cfg.epsilon0,
        state,
        epsilons,
    })
}

fn fuse(labels: &SoftLabelMatrix, beta: f64) -> SoftLabelMatrix {
    let mut out = labels.probs().clone();
    for mut row in out.outer_iter_mut() {
        let top = argmax(row.view());
        let sum = row.sum();
        row.mapv_inplace(|x| (1.0 - beta) * x / sum);
        row[top] += beta;
    }
    SoftLabelMatrix::from_trusted(out)
}

/// `beta * one_hot(argmax) + (1 - beta) * renormalized` for both label sets.
pub fn fuse_labels(state: &TransferState, beta: f64) -> (SoftLabelMatrix, SoftLabelMatrix) {
    (fuse(&state.intra, beta), fuse(&state.cross, beta))
}

/// Full result of one MULT direction.
#[derive(Debug, Clone)]
pub struct MultAssociation {
    pub labels: Association,
    /// Source memory bank used for initialization.
    pub bank: MemoryBank,
    pub iterations: usize,
    pub capped: bool,
    pub initial: InconsistencyReport,
    pub last: InconsistencyReport,
    /// Per-iteration reports, starting at `t = 0`, when tracing was requested.
    pub trace: Vec<InconsistencyReport>,
}

fn orient<'a>(
    fv: &'a FeatureMatrix,
    fr: &'a FeatureMatrix,
    assign_v: &'a ClusterAssignment,
    assign_r: &'a ClusterAssignment,
    direction: Direction,
) -> (
    &'a FeatureMatrix,
    &'a FeatureMatrix,
    &'a ClusterAssignment,
    &'a ClusterAssignment,
) {
    match direction {
        Direction::V2R => (fv, fr, assign_v, assign_r),
        Direction::R2V => (fr, fv, assign_r, assign_v),
    }
}

pub(crate) fn check_inputs(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
) -> Result<()> {
    if fv.dim() != fr.dim() {
        return Err(Error::shape(format!(
            "visible features are {}-dimensional, infrared {}-dimensional",
            fv.dim(),
            fr.dim()
        )));
    }
    if assign_v.len() != fv.len() || assign_r.len() != fr.len() {
        return Err(Error::shape("cluster assignments do not match feature counts"));
    }
    if assign_v.k() == 0 || assign_r.k() == 0 {
        return Err(Error::InvalidInput(
            "both modalities need at least one cluster".into(),
        ));
    }
    Ok(())
}

/// Runs one MULT direction end to end. Noise instances of either modality
/// are left out and stay unlabeled.
pub fn mult_associate(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
    direction: Direction,
) -> Result<MultAssociation> {
    mult_associate_traced(fv, fr, assign_v, assign_r, cfg, direction, false)
}

pub fn mult_associate_traced(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
    direction: Direction,
    trace: bool,
) -> Result<MultAssociation> {
    cfg.validate()?;
    check_inputs(fv, fr, assign_v, assign_r)?;
    let (src_f, tgt_f, src_assign, tgt_assign) = orient(fv, fr, assign_v, assign_r, direction);
    let bank = centroids(src_f, src_assign, cfg.tau, cfg.mu)?;
    let src_rows = src_assign.members();
    let tgt_rows = tgt_assign.members();
    let source = src_f.select(&src_rows);
    let target = tgt_f.select(&tgt_rows);

    let aff = build_affinities(&source, &target, cfg)?;
    let state = init_labels(&source, &target, &bank, cfg)?;
    let tcfg = TransferConfig::from_pipeline(cfg, direction);

    let initial = inconsistency(&state, &aff, cfg.alpha)?;
    let mut reports = Vec::new();
    let outcome = run_transfer_observed(state, &aff, &tcfg, |s| {
        if trace {
            reports.push(inconsistency(s, &aff, cfg.alpha).expect("shapes checked"));
        }
    })?;
    let last = inconsistency(&outcome.state, &aff, cfg.alpha)?;
    let (intra, cross) = fuse_labels(&outcome.state, cfg.beta);

    let src_mod = direction.source();
    let tgt_mod = direction.target();
    let labels = Association {
        direction,
        intra: ModalityLabels::new(src_mod, src_mod, intra, src_rows, src_f.len())?,
        cross: ModalityLabels::new(tgt_mod, src_mod, cross, tgt_rows, tgt_f.len())?,
    };
    Ok(MultAssociation {
        labels,
        bank,
        iterations: outcome.state.t,
        capped: outcome.capped,
        initial,
        last,
        trace: reports,
    })
}

/// Both directions, combined into the four label sets.
pub fn mult_associate_both(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
) -> Result<(LabelQuartet, MultAssociation, MultAssociation)> {
    let v2r = mult_associate(fv, fr, assign_v, assign_r, cfg, Direction::V2R)?;
    let r2v = mult_associate(fv, fr, assign_v, assign_r, cfg, Direction::R2V)?;
    let quartet = LabelQuartet::from_directions(v2r.labels.clone(), r2v.labels.clone())?;
    Ok((quartet, v2r, r2v))
}
