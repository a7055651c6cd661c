//! Forward-only training losses and the prototype momentum update.
//!
//! Two training modes alternate by epoch. In V-based mode the cross-modality
//! bank `M^a` and the intra-cross bank live in the visible label space and
//! are supervised by the V2R labels; R-based mode mirrors this with the
//! infrared label space and the R2V labels.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::clustering::{memory_probability, MemoryBank};
use crate::error::{Error, Result};
use crate::labels::Direction;
use crate::types::{argmax, Modality};

/// Floor applied to predicted probabilities before the logarithm.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    VBased,
    RBased,
}

impl TrainingMode {
    /// Even epochs train in the visible label space.
    pub fn for_epoch(epoch: usize) -> Self {
        if epoch % 2 == 0 {
            TrainingMode::VBased
        } else {
            TrainingMode::RBased
        }
    }

    pub fn label_space(self) -> Modality {
        match self {
            TrainingMode::VBased => Modality::Visible,
            TrainingMode::RBased => Modality::Infrared,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            TrainingMode::VBased => Direction::V2R,
            TrainingMode::RBased => Direction::R2V,
        }
    }
}

/// `-sum_k y_k ln(max(p_k, 1e-30))`
pub fn soft_cross_entropy(p: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::shape(format!(
            "prediction has {} entries, target {}",
            p.len(),
            y.len()
        )));
    }
    Ok(-p
        .iter()
        .zip(y.iter())
        .map(|(&p, &y)| if y == 0.0 { 0.0 } else { y * p.max(LOG_FLOOR).ln() })
        .sum::<f64>())
}

/// Aligned rows of features and labels for both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features_v: Array2<f64>,
    pub features_r: Array2<f64>,
    /// Visible instances, visible space.
    pub intra_v: Array2<f64>,
    /// Visible instances, infrared space.
    pub cross_v: Array2<f64>,
    /// Infrared instances, infrared space.
    pub intra_r: Array2<f64>,
    /// Infrared instances, visible space.
    pub cross_r: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features_v.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::InvalidInput("batch is empty".into()));
        }
        let rows = [
            ("infrared features", self.features_r.nrows()),
            ("visible intra labels", self.intra_v.nrows()),
            ("visible cross labels", self.cross_v.nrows()),
            ("infrared intra labels", self.intra_r.nrows()),
            ("infrared cross labels", self.cross_r.nrows()),
        ];
        for (name, n) in rows {
            if n != b {
                return Err(Error::shape(format!("{name} have {n} rows, batch size is {b}")));
            }
        }
        if self.features_v.ncols() != self.features_r.ncols() {
            return Err(Error::shape("visible and infrared feature dimensions differ"));
        }
        if self.intra_v.ncols() != self.cross_r.ncols() || self.intra_r.ncols() != self.cross_v.ncols() {
            return Err(Error::shape("labels sharing a label space differ in width"));
        }
        Ok(())
    }

    fn features(&self, m: Modality) -> &Array2<f64> {
        match m {
            Modality::Visible => &self.features_v,
            Modality::Infrared => &self.features_r,
        }
    }
}

/// Banks used by the losses of one training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBanks {
    /// `M~^v`, visible space.
    pub intra_v: MemoryBank,
    /// `M~^r`, infrared space.
    pub intra_r: MemoryBank,
    /// `M^^r` in V-based mode, `M^^v` in R-based mode; mode's label space.
    pub intra_cross: MemoryBank,
    /// `M^a`, mode's label space.
    pub agnostic: MemoryBank,
}

impl LossBanks {
    /// Fresh banks for `mode`: the intra-cross and cross-modality banks start
    /// as copies of the mode's intra bank.
    pub fn for_mode(intra_v: MemoryBank, intra_r: MemoryBank, mode: TrainingMode) -> Self {
        let source = match mode {
            TrainingMode::VBased => intra_v.clone(),
            TrainingMode::RBased => intra_r.clone(),
        };
        Self {
            intra_v,
            intra_r,
            intra_cross: source.clone(),
            agnostic: source,
        }
    }

    pub fn check(&self, mode: TrainingMode) -> Result<()> {
        let space = mode.label_space();
        let expected = [
            ("visible intra", &self.intra_v, Modality::Visible),
            ("infrared intra", &self.intra_r, Modality::Infrared),
            ("intra-cross", &self.intra_cross, space),
            ("cross-modality", &self.agnostic, space),
        ];
        for (name, bank, want) in expected {
            if bank.space != want {
                return Err(Error::ModeMismatch(format!(
                    "{name} bank is in the {} space, {:?} mode needs {want}",
                    bank.space, mode
                )));
            }
        }
        let k_space = match mode {
            TrainingMode::VBased => self.intra_v.k(),
            TrainingMode::RBased => self.intra_r.k(),
        };
        if self.intra_cross.k() != k_space || self.agnostic.k() != k_space {
            return Err(Error::shape("mode banks do not match the label space size"));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        batch.validate()?;
        if batch.intra_v.ncols() != self.intra_v.k() || batch.intra_r.ncols() != self.intra_r.k() {
            return Err(Error::shape("label widths do not match the intra banks"));
        }
        if batch.features_v.ncols() != self.intra_v.dim() {
            return Err(Error::shape("feature dimension does not match the banks"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_im_v: f64,
    pub l_im_r: f64,
    pub l_cm: f64,
    pub l_oclr_v: f64,
    pub l_oclr_r: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_im_v: f64, l_im_r: f64, l_cm: f64, l_oclr_v: f64, l_oclr_r: f64) -> Self {
        Self {
            l_im_v,
            l_im_r,
            l_cm,
            l_oclr_v,
            l_oclr_r,
            total: l_im_v + l_im_r + l_cm + l_oclr_v + l_oclr_r,
        }
    }

    /// Componentwise mean; `total` is re-summed from the means.
    pub fn mean(reports: &[LossReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self::new(
            avg(|r| r.l_im_v),
            avg(|r| r.l_im_r),
            avg(|r| r.l_cm),
            avg(|r| r.l_oclr_v),
            avg(|r| r.l_oclr_r),
        ))
    }
}

/// Mean over rows of `CE(P(f_i | bank, tau), y_i)`.
fn mean_ce(features: &Array2<f64>, bank: &MemoryBank, targets: &Array2<f64>, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for (f, y) in features.outer_iter().zip(targets.outer_iter()) {
        total += soft_cross_entropy(memory_probability(f, bank, tau).view(), y)?;
    }
    Ok(total / features.nrows() as f64)
}

/// Intra-modality losses `(l_im_v, l_im_r)`.
pub fn loss_im(batch: &Batch, banks: &LossBanks, tau: f64, mode: TrainingMode) -> Result<(f64, f64)> {
    banks.check(mode)?;
    banks.check_batch(batch)?;
    let v = mean_ce(&batch.features_v, &banks.intra_v, &batch.intra_v, tau)?;
    let r = mean_ce(&batch.features_r, &banks.intra_r, &batch.intra_r, tau)?;
    Ok(match mode {
        TrainingMode::VBased => (
            v,
            r + mean_ce(&batch.features_r, &banks.intra_cross, &batch.cross_r, tau)?,
        ),
        TrainingMode::RBased => (
            v + mean_ce(&batch.features_v, &banks.intra_cross, &batch.cross_v, tau)?,
            r,
        ),
    })
}

/// Labels of each modality in the mode's label space.
fn mode_targets(batch: &Batch, mode: TrainingMode) -> (&Array2<f64>, &Array2<f64>) {
    match mode {
        TrainingMode::VBased => (&batch.intra_v, &batch.cross_r),
        TrainingMode::RBased => (&batch.cross_v, &batch.intra_r),
    }
}

/// Cross-modality loss against `bank_a` in the mode's label space.
pub fn loss_cm(batch: &Batch, bank_a: &MemoryBank, tau: f64, mode: TrainingMode) -> Result<f64> {
    batch.validate()?;
    if bank_a.space != mode.label_space() {
        return Err(Error::ModeMismatch(format!(
            "cross-modality bank is in the {} space, {:?} mode needs {}",
            bank_a.space,
            mode,
            mode.label_space()
        )));
    }
    let (yv, yr) = mode_targets(batch, mode);
    if yv.ncols() != bank_a.k() {
        return Err(Error::shape("label width does not match the cross-modality bank"));
    }
    Ok(mean_ce(&batch.features_v, bank_a, yv, tau)? + mean_ce(&batch.features_r, bank_a, yr, tau)?)
}

fn oclr_modality(
    features: &Array2<f64>,
    banks: &LossBanks,
    intra_target: &MemoryBank,
    tau: f64,
    sharp_tau: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for f in features.outer_iter() {
        let p = memory_probability(f, &banks.agnostic, tau);
        let t1 = memory_probability(f, intra_target, sharp_tau);
        let t2 = memory_probability(f, &banks.intra_cross, sharp_tau);
        total += soft_cross_entropy(p.view(), t1.view())? + soft_cross_entropy(p.view(), t2.view())?;
    }
    Ok(total / features.nrows() as f64)
}

/// Refinement losses `(l_oclr_v, l_oclr_r)`: predictions from `M^a` against
/// sharpened predictions from the mode's intra bank and intra-cross bank.
pub fn loss_oclr(
    batch: &Batch,
    banks: &LossBanks,
    tau: f64,
    sharpen_divisor: f64,
    mode: TrainingMode,
) -> Result<(f64, f64)> {
    if !(sharpen_divisor >= 1.0) {
        return Err(Error::InvalidConfig("sharpen_divisor must be at least 1".into()));
    }
    banks.check(mode)?;
    banks.check_batch(batch)?;
    let intra_target = match mode {
        TrainingMode::VBased => &banks.intra_v,
        TrainingMode::RBased => &banks.intra_r,
    };
    let sharp = tau / sharpen_divisor;
    Ok((
        oclr_modality(batch.features(Modality::Visible), banks, intra_target, tau, sharp)?,
        oclr_modality(batch.features(Modality::Infrared), banks, intra_target, tau, sharp)?,
    ))
}

/// Every loss term for one batch.
pub fn evaluate(
    batch: &Batch,
    banks: &LossBanks,
    tau: f64,
    sharpen_divisor: f64,
    mode: TrainingMode,
) -> Result<LossReport> {
    let (im_v, im_r) = loss_im(batch, banks, tau, mode)?;
    let cm = loss_cm(batch, &banks.agnostic, tau, mode)?;
    let (oclr_v, oclr_r) = loss_oclr(batch, banks, tau, sharpen_divisor, mode)?;
    Ok(LossReport::new(im_v, im_r, cm, oclr_v, oclr_r))
}

/// `m_label <- mu * m_label + (1 - mu) * f`, then renormalized.
pub fn momentum_update_in_place(
    bank: &mut MemoryBank,
    feature: ArrayView1<'_, f64>,
    label: usize,
    mu: f64,
) -> Result<()> {
    if label >= bank.k() {
        return Err(Error::LabelOutOfRange { label, k: bank.k() });
    }
    if feature.len() != bank.dim() {
        return Err(Error::shape("feature dimension does not match the bank"));
    }
    let mut row = bank.prototypes.row_mut(label);
    let updated: Array1<f64> = &row * mu + &feature * (1.0 - mu);
    let norm = updated.dot(&updated).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroRow(label));
    }
    row.assign(&(updated / norm));
    Ok(())
}

pub fn momentum_update(
    bank: &MemoryBank,
    feature: ArrayView1<'_, f64>,
    label: usize,
    mu: f64,
) -> Result<MemoryBank> {
    let mut out = bank.clone();
    momentum_update_in_place(&mut out, feature, label, mu)?;
    Ok(out)
}

/// Momentum updates for every row of `batch`, visible before infrared within
/// a row. Intra banks follow intra labels; the mode banks follow the labels
/// of the mode's direction.
pub fn update_banks(banks: &mut LossBanks, batch: &Batch, mode: TrainingMode) -> Result<()> {
    banks.check(mode)?;
    banks.check_batch(batch)?;
    for i in 0..batch.len() {
        let fv = batch.features_v.row(i);
        let fr = batch.features_r.row(i);
        let yv = argmax(batch.intra_v.row(i));
        let yr = argmax(batch.intra_r.row(i));
        let mu_v = banks.intra_v.mu;
        let mu_r = banks.intra_r.mu;
        momentum_update_in_place(&mut banks.intra_v, fv, yv, mu_v)?;
        momentum_update_in_place(&mut banks.intra_r, fr, yr, mu_r)?;
        let (a_v, a_r) = match mode {
            TrainingMode::VBased => (yv, argmax(batch.cross_r.row(i))),
            TrainingMode::RBased => (argmax(batch.cross_v.row(i)), yr),
        };
        let mu_a = banks.agnostic.mu;
        momentum_update_in_place(&mut banks.agnostic, fv, a_v, mu_a)?;
        momentum_update_in_place(&mut banks.agnostic, fr, a_r, mu_a)?;
        let mu_c = banks.intra_cross.mu;
        match mode {
            TrainingMode::VBased => momentum_update_in_place(&mut banks.intra_cross, fr, a_r, mu_c)?,
            TrainingMode::RBased => momentum_update_in_place(&mut banks.intra_cross, fv, a_v, mu_c)?,
        }
    }
    Ok(())
}
