//! Seeded two-modality Gaussian blobs on the unit sphere.
//!
//! The draw order is fixed so a seed pins every byte of the output:
//! identity centers, then gap vectors, then visible instances grouped by
//! identity, then infrared instances grouped by identity. Uniforms come
//! from SplitMix64 (top 53 bits), normals from the Box-Muller cosine branch.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::types::{FeatureMatrix, Modality};

/// Attempts per identity center before giving up on the separation.
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// One offset vector shared by every identity.
    SharedOffset,
    /// An independent offset of the same norm per identity.
    PerIdOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_ids: usize,
    pub per_id_v: usize,
    pub per_id_r: usize,
    pub dim: usize,
    /// Minimum Euclidean distance between identity centers.
    pub id_separation: f64,
    pub blob_std: f64,
    pub modality_gap: f64,
    pub gap_mode: GapMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_ids: 10,
            per_id_v: 20,
            per_id_r: 20,
            dim: 32,
            id_separation: 1.0,
            blob_std: 0.05,
            modality_gap: 0.3,
            gap_mode: GapMode::SharedOffset,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_ids == 0 {
            return Err(Error::InvalidConfig("num_ids must be at least 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be at least 2".into()));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.blob_std) || !finite_nonneg(self.modality_gap) {
            return Err(Error::InvalidConfig(
                "blob_std and modality_gap must be finite and nonnegative".into(),
            ));
        }
        if !finite_nonneg(self.id_separation) {
            return Err(Error::InvalidConfig(
                "id_separation must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub visible: FeatureMatrix,
    pub infrared: FeatureMatrix,
    pub gt: GroundTruth,
    /// Unit identity centers, one row per identity.
    pub centers: Array2<f64>,
}

struct Sampler {
    rng: SplitMix64,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Uniform on [0, 1).
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    fn normal_vec(&mut self, dim: usize) -> Array1<f64> {
        Array1::from_shape_fn(dim, |_| self.normal())
    }

    /// Uniform direction on the sphere.
    fn direction(&mut self, dim: usize) -> Array1<f64> {
        loop {
            let v = self.normal_vec(dim);
            let norm = v.dot(&v).sqrt();
            if norm > 1e-12 {
                return unit(v / norm);
            }
        }
    }
}

/// Renormalizes until the vector is a fixed point of normalization, so that
/// normalizing it again leaves every bit unchanged.
fn unit(mut v: Array1<f64>) -> Array1<f64> {
    for _ in 0..4 {
        let norm = v.dot(&v).sqrt();
        if norm == 1.0 {
            break;
        }
        v /= norm;
    }
    v
}

fn place_centers(spec: &SynthSpec, s: &mut Sampler) -> Result<Array2<f64>> {
    let mut centers = Array2::<f64>::zeros((spec.num_ids, spec.dim));
    for g in 0..spec.num_ids {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c = s.direction(spec.dim);
            let clear = (0..g).all(|h| {
                let d = &centers.row(h) - &c;
                d.dot(&d).sqrt() >= spec.id_separation
            });
            if clear {
                centers.row_mut(g).assign(&c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleSeparation {
                ids: spec.num_ids,
                separation: spec.id_separation,
                dim: spec.dim,
            });
        }
    }
    Ok(centers)
}

fn instances(
    centers: &Array2<f64>,
    offsets: &Array2<f64>,
    per_id: usize,
    std: f64,
    s: &mut Sampler,
) -> Array2<f64> {
    let (g, dim) = centers.dim();
    let mut out = Array2::zeros((g * per_id, dim));
    for id in 0..g {
        for k in 0..per_id {
            let noise = s.normal_vec(dim) * std;
            let mut row = out.row_mut(id * per_id + k);
            row.assign(&centers.row(id));
            row += &offsets.row(id);
            row += &noise;
        }
    }
    out
}

/// Generates features and identities for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut s = Sampler::new(spec.seed);
    let centers = place_centers(spec, &mut s)?;
    let (g, dim) = (spec.num_ids, spec.dim);
    let mut offsets = Array2::zeros((g, dim));
    if spec.modality_gap > 0.0 {
        match spec.gap_mode {
            GapMode::SharedOffset => {
                let v = s.direction(dim) * spec.modality_gap;
                for mut row in offsets.outer_iter_mut() {
                    row.assign(&v);
                }
            }
            GapMode::PerIdOffset => {
                for mut row in offsets.outer_iter_mut() {
                    row.assign(&(s.direction(dim) * spec.modality_gap));
                }
            }
        }
    }
    let zero = Array2::zeros((g, dim));
    let raw_v = instances(&centers, &zero, spec.per_id_v, spec.blob_std, &mut s);
    let raw_r = instances(&centers, &offsets, spec.per_id_r, spec.blob_std, &mut s);
    let ids = |per: usize| (0..g).flat_map(|id| std::iter::repeat_n(id as i64, per)).collect();
    Ok(SynthData {
        visible: FeatureMatrix::new(raw_v, Modality::Visible)?,
        infrared: FeatureMatrix::new(raw_r, Modality::Infrared)?,
        gt: GroundTruth::new(ids(spec.per_id_v), ids(spec.per_id_r)),
        centers,
    })
}
