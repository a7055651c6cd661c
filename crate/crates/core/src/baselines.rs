//! Reference associators, and a common entry point over every method.

use serde::{Deserialize, Serialize};

use crate::clustering::{centroids, ClusterAssignment};
use crate::config::PipelineConfig;
use crate::distance::pairwise_squared_euclidean;
use crate::error::Result;
use crate::labels::{Association, Direction, LabelQuartet, ModalityLabels};
use crate::mult::{check_inputs, mult_associate};
use crate::transport::{otla_init, SinkhornSettings};
use crate::types::{FeatureMatrix, SoftLabelMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mult,
    /// Cluster labels plus one balanced OT assignment, no transfer.
    OtlaOnly,
    /// Cluster labels plus greedy centroid matching.
    GreedyCentroid,
}

struct Oriented<'a> {
    src: &'a FeatureMatrix,
    tgt: &'a FeatureMatrix,
    src_assign: &'a ClusterAssignment,
    tgt_assign: &'a ClusterAssignment,
}

fn orient<'a>(
    fv: &'a FeatureMatrix,
    fr: &'a FeatureMatrix,
    assign_v: &'a ClusterAssignment,
    assign_r: &'a ClusterAssignment,
    direction: Direction,
) -> Oriented<'a> {
    match direction {
        Direction::V2R => Oriented { src: fv, tgt: fr, src_assign: assign_v, tgt_assign: assign_r },
        Direction::R2V => Oriented { src: fr, tgt: fv, src_assign: assign_r, tgt_assign: assign_v },
    }
}

/// One-hot cluster labels of the source members.
fn intra_one_hot(o: &Oriented<'_>, direction: Direction) -> Result<ModalityLabels> {
    let rows = o.src_assign.members();
    let labels: Vec<usize> = rows
        .iter()
        .map(|&i| o.src_assign.labels.get(i).expect("member rows carry a label"))
        .collect();
    let soft = SoftLabelMatrix::one_hot(&labels, o.src_assign.k())?;
    let m = direction.source();
    ModalityLabels::new(m, m, soft, rows, o.src.len())
}

pub fn associate_otla_only(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
    direction: Direction,
) -> Result<Association> {
    cfg.validate()?;
    check_inputs(fv, fr, assign_v, assign_r)?;
    let o = orient(fv, fr, assign_v, assign_r, direction);
    let bank = centroids(o.src, o.src_assign, cfg.tau, cfg.mu)?;
    let tgt_rows = o.tgt_assign.members();
    let target = o.tgt.select(&tgt_rows);
    let cross = otla_init(&target, &bank, cfg.lambda, SinkhornSettings::from_config(cfg))?;
    Ok(Association {
        direction,
        intra: intra_one_hot(&o, direction)?,
        cross: ModalityLabels::new(direction.target(), direction.source(), cross, tgt_rows, o.tgt.len())?,
    })
}

/// Source cluster for each target cluster: ascending-distance greedy matching
/// without replacement while source clusters remain, then nearest source
/// cluster for the leftovers. Ties go to the lower (target, source) index.
pub fn greedy_match(distance: &ndarray::Array2<f64>) -> Vec<usize> {
    let (kt, ks) = distance.dim();
    let mut pairs: Vec<(usize, usize)> = (0..kt).flat_map(|t| (0..ks).map(move |s| (t, s))).collect();
    pairs.sort_by(|&(t1, s1), &(t2, s2)| {
        distance[[t1, s1]]
            .total_cmp(&distance[[t2, s2]])
            .then((t1, s1).cmp(&(t2, s2)))
    });
    let mut matched = vec![None; kt];
    let mut used = vec![false; ks];
    let mut remaining = kt.min(ks);
    for (t, s) in pairs {
        if remaining == 0 {
            break;
        }
        if matched[t].is_none() && !used[s] {
            matched[t] = Some(s);
            used[s] = true;
            remaining -= 1;
        }
    }
    matched
        .into_iter()
        .enumerate()
        .map(|(t, m)| {
            m.unwrap_or_else(|| {
                (0..ks)
                    .min_by(|&a, &b| distance[[t, a]].total_cmp(&distance[[t, b]]).then(a.cmp(&b)))
                    .expect("at least one source cluster")
            })
        })
        .collect()
}

pub fn associate_greedy_centroid(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
    direction: Direction,
) -> Result<Association> {
    cfg.validate()?;
    check_inputs(fv, fr, assign_v, assign_r)?;
    let o = orient(fv, fr, assign_v, assign_r, direction);
    let src_bank = centroids(o.src, o.src_assign, cfg.tau, cfg.mu)?;
    let tgt_bank = centroids(o.tgt, o.tgt_assign, cfg.tau, cfg.mu)?;
    let distance = pairwise_squared_euclidean(tgt_bank.prototypes.view(), src_bank.prototypes.view());
    let matching = greedy_match(&distance);
    let tgt_rows = o.tgt_assign.members();
    let labels: Vec<usize> = tgt_rows
        .iter()
        .map(|&i| matching[o.tgt_assign.labels.get(i).expect("member rows carry a label")])
        .collect();
    let cross = SoftLabelMatrix::one_hot(&labels, src_bank.k())?;
    Ok(Association {
        direction,
        intra: intra_one_hot(&o, direction)?,
        cross: ModalityLabels::new(direction.target(), direction.source(), cross, tgt_rows, o.tgt.len())?,
    })
}

/// Runs `method` in one direction.
pub fn associate(
    method: Method,
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
    direction: Direction,
) -> Result<Association> {
    match method {
        Method::Mult => Ok(mult_associate(fv, fr, assign_v, assign_r, cfg, direction)?.labels),
        Method::OtlaOnly => associate_otla_only(fv, fr, assign_v, assign_r, cfg, direction),
        Method::GreedyCentroid => associate_greedy_centroid(fv, fr, assign_v, assign_r, cfg, direction),
    }
}

/// Runs `method` in both directions.
pub fn associate_both(
    method: Method,
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    assign_v: &ClusterAssignment,
    assign_r: &ClusterAssignment,
    cfg: &PipelineConfig,
) -> Result<LabelQuartet> {
    let v2r = associate(method, fv, fr, assign_v, assign_r, cfg, Direction::V2R)?;
    let r2v = associate(method, fv, fr, assign_v, assign_r, cfg, Direction::R2V)?;
    LabelQuartet::from_directions(v2r, r2v)
}
