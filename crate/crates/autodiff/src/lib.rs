//! Deterministic dense f64 tensors with a reverse-mode tape.
//!
//! Build a [`Tape`], place parameters from a [`ParamStore`] on it, compose
//! ops and call [`Tape::backward`] on a scalar loss. Everything runs on one
//! thread in a fixed order, so identical inputs give bit-identical results.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{Checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, LAYER_NORM_MIN_VAR};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("loss is not recorded on this tape")]
    DisconnectedLoss,
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
