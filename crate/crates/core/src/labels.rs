//! Label sets produced by the associators, keyed back to instance indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax, HardLabelVector, Modality, SoftLabelMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Visible label space; visible intra labels, infrared cross labels.
    V2R,
    /// Infrared label space; infrared intra labels, visible cross labels.
    R2V,
}

impl Direction {
    pub fn source(self) -> Modality {
        match self {
            Direction::V2R => Modality::Visible,
            Direction::R2V => Modality::Infrared,
        }
    }

    pub fn target(self) -> Modality {
        self.source().other()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::V2R => "v2r",
            Direction::R2V => "r2v",
        }
    }
}

/// Soft labels for the non-noise instances of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityLabels {
    /// Modality of the labeled instances.
    pub modality: Modality,
    /// Modality whose clusters the label columns index.
    pub space: Modality,
    pub soft: SoftLabelMatrix,
    /// Instance index of each row of `soft`, ascending.
    pub rows: Vec<usize>,
    /// Number of instances in the modality, noise included.
    pub total: usize,
}

impl ModalityLabels {
    pub fn new(
        modality: Modality,
        space: Modality,
        soft: SoftLabelMatrix,
        rows: Vec<usize>,
        total: usize,
    ) -> Result<Self> {
        if soft.len() != rows.len() {
            return Err(Error::shape(format!(
                "{} label rows for {} instances",
                soft.len(),
                rows.len()
            )));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r >= total) {
            return Err(Error::InvalidInput(
                "label row indices must be strictly increasing and below the instance count".into(),
            ));
        }
        Ok(Self {
            modality,
            space,
            soft,
            rows,
            total,
        })
    }

    /// Labels covering every instance.
    pub fn dense(modality: Modality, space: Modality, soft: SoftLabelMatrix) -> Self {
        let total = soft.len();
        Self {
            modality,
            space,
            soft,
            rows: (0..total).collect(),
            total,
        }
    }

    pub fn space_size(&self) -> usize {
        self.soft.space_size()
    }

    /// Argmax per labeled row; unlabeled instances are noise.
    pub fn hard(&self) -> HardLabelVector {
        let mut labels = vec![None; self.total];
        for (r, &i) in self.rows.iter().enumerate() {
            labels[i] = Some(argmax(self.soft.row(r)));
        }
        HardLabelVector::new(labels, self.space_size()).expect("argmax is within range")
    }
}

/// Intra and cross labels from one association direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub direction: Direction,
    /// Source-modality instances in the source label space.
    pub intra: ModalityLabels,
    /// Target-modality instances in the source label space.
    pub cross: ModalityLabels,
}

/// The four label sets of a two-direction association.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelQuartet {
    /// Visible instances, visible space (from V2R).
    pub intra_v: ModalityLabels,
    /// Infrared instances, visible space (from V2R).
    pub cross_r: ModalityLabels,
    /// Infrared instances, infrared space (from R2V).
    pub intra_r: ModalityLabels,
    /// Visible instances, infrared space (from R2V).
    pub cross_v: ModalityLabels,
}

impl LabelQuartet {
    pub fn from_directions(v2r: Association, r2v: Association) -> Result<Self> {
        if v2r.direction != Direction::V2R || r2v.direction != Direction::R2V {
            return Err(Error::InvalidInput("expected one V2R and one R2V association".into()));
        }
        Ok(Self {
            intra_v: v2r.intra,
            cross_r: v2r.cross,
            intra_r: r2v.intra,
            cross_v: r2v.cross,
        })
    }

    /// `(file stem, labels)` in a fixed order.
    pub fn named(&self) -> [(&'static str, &ModalityLabels); 4] {
        [
            ("intra_v", &self.intra_v),
            ("cross_r", &self.cross_r),
            ("intra_r", &self.intra_r),
            ("cross_v", &self.cross_v),
        ]
    }
}
