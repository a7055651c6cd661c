//! Cross-modality pseudo-label association for unsupervised
//! visible-infrared re-identification.

pub mod affinity;
pub mod baselines;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod distance;
pub mod eval;
pub mod io;
pub mod error;
pub mod labels;
pub mod losses;
pub mod mult;
pub mod pipeline;
pub mod synth;
pub mod transport;
pub mod types;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use labels::{Association, Direction, LabelQuartet, ModalityLabels};
pub use types::{FeatureMatrix, HardLabelVector, Modality, SoftLabelMatrix};
