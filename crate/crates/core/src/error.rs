use alloc::string::String;

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("row {row} of {what} has norm {norm}, expected 1")]
    NotUnitNorm {
        what: &'static str,
        row: usize,
        norm: f64,
    },
    #[error("invalid {name}: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("unknown {what} `{name}`")]
    UnknownKind { what: &'static str, name: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(&'static str),
    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Error {
    Error::InvalidParameter { name, reason }
}
