//! Transformer models over lattices and word sequences.
//!
//! [`LtLm`] scores every arc of a lattice in one forward pass. [`ArLm`] is a
//! small causal language model built from the same blocks and used to
//! rescore N-best lists one hypothesis at a time.

pub mod arlm;
pub mod blocks;
pub mod ltlm;
pub mod metrics;
pub mod train;

use thiserror::Error;

pub use arlm::{train_arlm, ArLm, ArLmConfig, ArTrainConfig};
pub use blocks::{BlockDims, DropoutCtx, Segment};
pub use ltlm::{bce_loss, grad_check_model, ArcBatch, LtLm, LtLmConfig};
pub use metrics::{accuracy, roc_auc};
pub use train::{evaluate, prepare_lattice, train as train_ltlm, EpochReport, EvalReport, TrainConfig, Trainer, TrainingExample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("state {state} does not fit the {max}-row position table")]
    PositionOverflow { state: usize, max: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch has no valid arcs")]
    EmptyBatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] ltlm_autodiff::AutodiffError),
    #[error(transparent)]
    Lattice(#[from] ltlm_core::LatticeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
