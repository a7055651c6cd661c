//! Epoch-level label refresh over supplied feature snapshots.
//!
//! Each epoch clusters both modalities, runs MULT in both directions, walks
//! the labeled instances in batches to evaluate the losses of the epoch's
//! training mode (updating the memory banks after every batch), and scores
//! the labels when identities are known.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::clustering::{centroids, cluster_features, ClusterAssignment};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{full_report, GroundTruth, MetricsReport};
use crate::io::{read_features, write_atomic};
use crate::labels::LabelQuartet;
use crate::losses::{evaluate, update_banks, Batch, LossBanks, LossReport, TrainingMode};
use crate::mult::mult_associate_both;
use crate::types::{FeatureMatrix, Modality};

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub epoch: usize,
    pub mode: TrainingMode,
    pub assign_v: ClusterAssignment,
    pub assign_r: ClusterAssignment,
    pub labels: LabelQuartet,
    pub metrics: Option<MetricsReport>,
    pub loss: LossReport,
    /// Transfer iterations of the V2R and R2V runs.
    pub iterations: (usize, usize),
}

fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(ndarray::Axis(0), rows)
}

/// Batches of `batch_size` over the labeled instances. The batch count
/// follows the larger modality; the smaller one wraps around.
pub fn make_batches(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    labels: &LabelQuartet,
    batch_size: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if labels.intra_v.rows != labels.cross_v.rows || labels.intra_r.rows != labels.cross_r.rows {
        return Err(Error::InvalidInput(
            "intra and cross labels cover different instances".into(),
        ));
    }
    let (rows_v, rows_r) = (&labels.intra_v.rows, &labels.intra_r.rows);
    let (nv, nr) = (rows_v.len(), rows_r.len());
    if nv == 0 || nr == 0 {
        return Err(Error::InvalidInput("no labeled instances to batch".into()));
    }
    let n = nv.max(nr);
    let mut out = Vec::with_capacity(n.div_ceil(batch_size));
    for start in (0..n).step_by(batch_size) {
        let len = batch_size.min(n - start);
        let pos_v: Vec<usize> = (start..start + len).map(|j| j % nv).collect();
        let pos_r: Vec<usize> = (start..start + len).map(|j| j % nr).collect();
        let inst_v: Vec<usize> = pos_v.iter().map(|&p| rows_v[p]).collect();
        let inst_r: Vec<usize> = pos_r.iter().map(|&p| rows_r[p]).collect();
        out.push(Batch {
            features_v: gather(fv.data(), &inst_v),
            features_r: gather(fr.data(), &inst_r),
            intra_v: gather(labels.intra_v.soft.probs(), &pos_v),
            cross_v: gather(labels.cross_v.soft.probs(), &pos_v),
            intra_r: gather(labels.intra_r.soft.probs(), &pos_r),
            cross_r: gather(labels.cross_r.soft.probs(), &pos_r),
        });
    }
    Ok(out)
}

/// One pass over the batches: losses with the current banks, then the
/// momentum updates. Returns the mean report.
pub fn loss_pass(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    labels: &LabelQuartet,
    banks: &mut LossBanks,
    cfg: &PipelineConfig,
    mode: TrainingMode,
) -> Result<LossReport> {
    let mut reports = Vec::new();
    for batch in make_batches(fv, fr, labels, cfg.batch_size)? {
        reports.push(evaluate(&batch, banks, cfg.tau, cfg.sharpen_divisor, mode)?);
        update_banks(banks, &batch, mode)?;
    }
    Ok(LossReport::mean(&reports).expect("at least one batch"))
}

pub fn run_epoch(
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    epoch: usize,
    cfg: &PipelineConfig,
    gt: Option<&GroundTruth>,
) -> Result<EpochResult> {
    cfg.validate()?;
    if fv.modality() != Modality::Visible || fr.modality() != Modality::Infrared {
        return Err(Error::InvalidInput("expected visible then infrared features".into()));
    }
    let assign_v = cluster_features(fv, cfg)?;
    let assign_r = cluster_features(fr, cfg)?;
    let (labels, v2r, r2v) = mult_associate_both(fv, fr, &assign_v, &assign_r, cfg)?;
    let mode = TrainingMode::for_epoch(epoch);
    let mut banks = LossBanks::for_mode(
        centroids(fv, &assign_v, cfg.tau, cfg.mu)?,
        centroids(fr, &assign_r, cfg.tau, cfg.mu)?,
        mode,
    );
    let loss = loss_pass(fv, fr, &labels, &mut banks, cfg, mode)?;
    let metrics = gt
        .map(|gt| full_report(&labels, gt, cfg.include_self_pairs))
        .transpose()?;
    Ok(EpochResult {
        epoch,
        mode,
        assign_v,
        assign_r,
        labels,
        metrics,
        loss,
        iterations: (v2r.iterations, r2v.iterations),
    })
}

/// Path of an epoch's snapshot, `.mfv` preferred over `.csv`.
pub fn snapshot_path(dir: &Path, epoch: usize, modality: Modality) -> Option<PathBuf> {
    ["mfv", "csv"]
        .iter()
        .map(|ext| dir.join(format!("epoch_{epoch}_{modality}.{ext}")))
        .find(|p| p.is_file())
}

/// Epoch count implied by the largest `epoch_{i}_*` file name.
fn snapshot_count(dir: &Path) -> Result<usize> {
    let mut max = None;
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(rest) = name.strip_prefix("epoch_") else { continue };
        let Some((idx, _)) = rest.split_once('_') else { continue };
        if let Ok(i) = idx.parse::<usize>() {
            max = max.max(Some(i));
        }
    }
    Ok(max.map_or(0, |m| m + 1))
}

/// One trace row per epoch.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub mode: TrainingMode,
    pub metrics: Option<MetricsReport>,
    pub clusters_v: usize,
    pub clusters_r: usize,
    pub loss: LossReport,
}

impl From<&EpochResult> for TraceRow {
    fn from(r: &EpochResult) -> Self {
        Self {
            epoch: r.epoch,
            mode: r.mode,
            metrics: r.metrics,
            clusters_v: r.assign_v.k(),
            clusters_r: r.assign_r.k(),
            loss: r.loss,
        }
    }
}

/// Runs every snapshot in `dir` (`epoch_{i}_visible.mfv` and
/// `epoch_{i}_infrared.mfv`, or `.csv`) in epoch order.
pub fn run_trace(dir: &Path, cfg: &PipelineConfig, gt: Option<&GroundTruth>) -> Result<Vec<TraceRow>> {
    let n = snapshot_count(dir)?;
    if n == 0 {
        return Err(Error::MissingSnapshot(0));
    }
    let mut rows = Vec::with_capacity(n);
    for epoch in 0..n {
        let path = |m| snapshot_path(dir, epoch, m).ok_or(Error::MissingSnapshot(epoch));
        let fv = read_features(&path(Modality::Visible)?, Modality::Visible)?;
        let fr = read_features(&path(Modality::Infrared)?, Modality::Infrared)?;
        rows.push(TraceRow::from(&run_epoch(&fv, &fr, epoch, cfg, gt)?));
    }
    Ok(rows)
}

pub const TRACE_COLUMNS: [&str; 18] = [
    "epoch",
    "mode",
    "intra_acc_v",
    "intra_acc_r",
    "cross_acc_v",
    "cross_acc_r",
    "intra_re_v",
    "intra_re_r",
    "cross_re_v",
    "cross_re_r",
    "clusters_v",
    "clusters_r",
    "l_im_v",
    "l_im_r",
    "l_cm",
    "l_oclr_v",
    "l_oclr_r",
    "total",
];

/// CSV with a header; undefined or absent metrics are empty cells.
pub fn encode_trace(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            match r.mode {
                TrainingMode::VBased => "v_based".to_string(),
                TrainingMode::RBased => "r_based".to_string(),
            },
        ];
        let metrics = r.metrics.map(|m| m.values()).unwrap_or([None; 8]);
        rec.extend(metrics.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(r.clusters_v.to_string());
        rec.push(r.clusters_r.to_string());
        let l = &r.loss;
        rec.extend([l.l_im_v, l.l_im_r, l.l_cm, l.l_oclr_v, l.l_oclr_r, l.total].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_atomic(path, &encode_trace(rows)?)
}
