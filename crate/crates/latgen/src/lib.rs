//! Artificial lattices from text.
//!
//! A sentence is expanded into a graph of acoustic-class sequences
//! ([`graph`]), a random path through it is stretched into a frame-level
//! fake alignment using per-class duration histograms ([`duration`]), each
//! frame gets a class posterior from a fake acoustic model ([`fam`]), and a
//! beam decoder ([`decoder`]) turns the posteriors into a word lattice.
//! [`world`] builds a synthetic toy world with ground truth for all of it.

pub mod decoder;
pub mod duration;
pub mod fam;
pub mod generate;
pub mod graph;
pub mod lexicon;
pub mod world;

use thiserror::Error;

pub use decoder::{decode_to_lattice, DecoderConfig};
pub use duration::{DurationModel, Histogram};
pub use fam::{synthesize_posteriors, FakeAcousticModel, Posteriors};
pub use generate::{generate_corpus, CorpusStats, GeneratedCorpus, GenerationConfig, GenerationModels};
pub use graph::{build_alignment_graph, sample_fake_alignment, AlignmentGraph, FakeAlignment};
pub use lexicon::Lexicon;

#[derive(Debug, Error)]
pub enum LatgenError {
    #[error("no input data")]
    EmptyInput,
    #[error("utterance {utterance}: {frames} alignment frames but {posteriors} posterior frames")]
    FrameCountMismatch { utterance: String, frames: usize, posteriors: usize },
    #[error("class {class} outside 0..{num_classes}")]
    InvalidClass { class: u32, num_classes: usize },
    #[error("word {0:?} has no pronunciation")]
    UnpronounceableWord(String),
    #[error("all tokens pruned at frame {frame}")]
    DeadEnd { frame: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Lattice(#[from] ltlm_core::LatticeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
