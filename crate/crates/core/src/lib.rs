//! Core data structures for lattice rescoring.
//!
//! A [`Lattice`] is the exchange object between every stage of the toolkit:
//! the artificial lattice generator produces them, the oracle aligner labels
//! their arcs, the lattice transformer consumes them and the rescoring engine
//! selects hypotheses from them. All scores are stored as costs (negative
//! natural-log probabilities).

pub mod align;
pub mod io;
pub mod lattice;
pub mod ngram;
pub mod random;
pub mod seed;
pub mod symbols;
pub mod weights;

pub use align::{corpus_wer, edit_distance, oracle_path, ArcTargets, CorpusWer, EditStats};
pub use lattice::{
    augment, enumerate_paths, prune, topo_sort, validate, Arc, Lattice, LatticeError, PathRecord,
    StateId, ValidationReport, MAX_STATES,
};
pub use ngram::{NgramModel, NgramState};
pub use symbols::{SymbolTable, WordId, BOS, EOS, EPS, UNK};
pub use weights::ScoreWeights;
