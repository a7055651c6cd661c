use std::path::PathBuf;

use thiserror::Error;

use crate::transport::TransportPlan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm")]
    ZeroRow(usize),

    #[error("non-finite value at ({0}, {1})")]
    NonFinite(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("sinkhorn did not converge (marginal error {error:.3e})")]
    NotConverged {
        error: f64,
        plan: Box<TransportPlan>,
    },

    #[error("non-finite value during sinkhorn scaling")]
    SinkhornNonFinite,

    #[error("memory banks do not match training mode: {0}")]
    ModeMismatch(String),

    #[error("label {label} out of range for {k} prototypes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("cannot place {ids} centers at separation {separation} in {dim} dimensions")]
    InfeasibleSeparation {
        ids: usize,
        separation: f64,
        dim: usize,
    },

    #[error("missing snapshot for epoch {0}")]
    MissingSnapshot(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
