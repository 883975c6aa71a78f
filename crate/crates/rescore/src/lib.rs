//! Hypothesis selection from lattices.
//!
//! [`single_shot_rescore`] scores all arcs of a lattice with one lattice
//! model call and runs a best-path search over the combined costs.
//! [`nbest_rescore`] is the conventional baseline: extract N distinct word
//! sequences and score each with a sequence model.

pub mod report;
pub mod rescore;
pub mod search;

use thiserror::Error;

pub use report::{stats_compare, Comparison, ComparisonRow, RescoreReport, UtteranceResult};
pub use rescore::{
    arc_cost_from_probability, first_pass_report, nbest_rescore, single_shot_rescore, ArcScorer, SequenceScorer,
    PROB_CLAMP,
};
pub use search::{best_path, nbest_extract, Hypothesis};

#[derive(Debug, Error)]
pub enum RescoreError {
    #[error("lattice {0:?} has no complete path")]
    NoCompletePath(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("reports {first:?} and {other:?} cover different utterances")]
    MismatchedUtteranceSets { first: String, other: String },
    #[error("no reference for utterance {0:?}")]
    MissingReference(String),
    #[error(transparent)]
    Lattice(#[from] ltlm_core::LatticeError),
    #[error(transparent)]
    Align(#[from] ltlm_core::align::AlignError),
    #[error(transparent)]
    Model(#[from] ltlm_model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
