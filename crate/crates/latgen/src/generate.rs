//! Corpus-level lattice generation.
//!
//! Targets are per-arc oracle labels for the augmented form of each lattice
//! (the arc order of `ltlm_core::augment`). Targets file format: one
//! `utt<TAB>0 1 0 ...` line per lattice.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ltlm_core::align::oracle_errors;
use ltlm_core::io::LatticeArchive;
use ltlm_core::lattice::forward_backward_best;
use ltlm_core::seed::derive_seed;
use ltlm_core::symbols::is_auxiliary;
use ltlm_core::{augment, edit_distance, oracle_path, Lattice, NgramModel, ScoreWeights, SymbolTable, WordId};

use crate::decoder::{decode_to_lattice, DecoderConfig};
use crate::duration::DurationModel;
use crate::fam::{synthesize_posteriors, FakeAcousticModel};
use crate::graph::{build_alignment_graph, sample_fake_alignment};
use crate::lexicon::Lexicon;
use crate::LatgenError;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub decoder: DecoderConfig,
    /// Dirichlet concentration for posterior noise; `None` uses FAM rows as is.
    pub kappa: Option<f64>,
    /// Extra attempts after a dead end, each doubling the token beam and
    /// `max_active`.
    pub retries: usize,
    pub max_beam: f64,
    pub strict: bool,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            kappa: None,
            retries: 3,
            max_beam: 64.0,
            strict: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationModels<'a> {
    pub lexicon: &'a Lexicon,
    pub lm: &'a NgramModel,
    pub durations: &'a DurationModel,
    pub fam: &'a FakeAcousticModel,
    pub table: Option<&'a SymbolTable>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub generated: usize,
    pub skipped: usize,
    pub retried: usize,
    pub avg_arcs: f64,
    pub avg_states: f64,
    /// Lattice arcs per reference word.
    pub arcs_per_word: f64,
    pub oracle_wer: f64,
    pub first_pass_wer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratedCorpus {
    /// Lattices with their source texts as references.
    pub archive: LatticeArchive,
    /// Oracle labels aligned with the arcs of `augment(lattice)`.
    pub targets: BTreeMap<String, Vec<u8>>,
    /// Utterances that produced no lattice, with the reason.
    pub failures: Vec<(String, String)>,
    pub stats: CorpusStats,
}

/// Words of the best path under `weights`, auxiliary symbols removed. Ties
/// go to the lowest arc index.
pub fn best_path_words(lattice: &Lattice, weights: &ScoreWeights) -> Result<Vec<WordId>, LatgenError> {
    let (_, beta) = forward_backward_best(lattice, weights, None)?;
    let out = lattice.out_arcs();
    let mut s = lattice.initial_state;
    let mut words = Vec::new();
    let tol = |x: f64| 1e-9 * (1.0 + x.abs());
    for _ in 0..=lattice.num_states {
        if let Some(&c) = lattice.final_states.get(&s) {
            if (weights.final_cost(c) - beta[s]).abs() <= tol(beta[s]) {
                return Ok(words);
            }
        }
        let next = out[s].iter().copied().find(|&ai| {
            let a = &lattice.arcs[ai];
            (weights.arc_cost(a.ac_cost, a.lm_cost) + beta[a.dst] - beta[s]).abs() <= tol(beta[s])
        });
        let Some(ai) = next else { break };
        let a = &lattice.arcs[ai];
        if !is_auxiliary(a.word) {
            words.push(a.word);
        }
        s = a.dst;
    }
    Err(LatgenError::Lattice(ltlm_core::LatticeError::NoFinalState))
}

/// Generates one lattice from one sentence.
pub fn generate_lattice(
    utterance_id: &str,
    words: &[WordId],
    models: &GenerationModels<'_>,
    config: &GenerationConfig,
) -> Result<(Lattice, usize), LatgenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, utterance_id));
    let graph = build_alignment_graph(words, models.lexicon, models.table, config.strict)?;
    let fali = sample_fake_alignment(&graph, models.durations, &mut rng, utterance_id);
    let post = synthesize_posteriors(&fali.frames, models.fam, &mut rng, config.kappa)?;
    let mut dec = config.decoder;
    let mut attempt = 0;
    loop {
        match decode_to_lattice(&post, models.lexicon, models.lm, &dec, utterance_id) {
            Ok(lat) => return Ok((lat, attempt)),
            Err(LatgenError::DeadEnd { frame }) if attempt < config.retries && dec.lattice_beam < config.max_beam => {
                log::debug!("{utterance_id}: dead end at frame {frame}, retrying with beam {}", dec.lattice_beam * 2.0);
                dec.lattice_beam = (dec.lattice_beam * 2.0).min(config.max_beam);
                dec.max_active = dec.max_active.saturating_mul(2);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Generates a lattice per sentence. Failing utterances are recorded in
/// `failures` and skipped.
pub fn generate_corpus(
    texts: &[(String, Vec<WordId>)],
    models: &GenerationModels<'_>,
    config: &GenerationConfig,
) -> GeneratedCorpus {
    let mut corpus = GeneratedCorpus::default();
    let first_pass = config.decoder.weights();
    let (mut arcs, mut states, mut ref_words, mut oracle_err, mut fp_err, mut retried) = (0, 0, 0, 0, 0, 0);
    for (id, words) in texts {
        let result = generate_lattice(id, words, models, config).and_then(|(lat, attempts)| {
            let aug = augment(&lat)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("oracle:{id}")));
            let targets = oracle_path(&aug, words, &mut rng)?;
            let oracle = oracle_errors(&lat, words)?;
            let hyp = best_path_words(&lat, &first_pass)?;
            Ok((lat, attempts, targets.labels, oracle, edit_distance(&hyp, words).errors()))
        });
        match result {
            Ok((lat, attempts, labels, oracle, fp)) => {
                arcs += lat.arcs.len();
                states += lat.num_states;
                ref_words += words.len();
                oracle_err += oracle;
                fp_err += fp;
                retried += usize::from(attempts > 0);
                corpus.targets.insert(id.clone(), labels);
                corpus.archive.references.insert(id.clone(), words.clone());
                corpus.archive.lattices.push(lat);
            }
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                corpus.failures.push((id.clone(), e.to_string()));
            }
        }
    }
    let n = corpus.archive.lattices.len();
    let per = |x: usize, d: usize| if d == 0 { 0.0 } else { x as f64 / d as f64 };
    corpus.stats = CorpusStats {
        generated: n,
        skipped: corpus.failures.len(),
        retried,
        avg_arcs: per(arcs, n),
        avg_states: per(states, n),
        arcs_per_word: per(arcs, ref_words),
        oracle_wer: 100.0 * per(oracle_err, ref_words),
        first_pass_wer: 100.0 * per(fp_err, ref_words),
    };
    corpus
}

pub fn write_targets<W: Write>(targets: &BTreeMap<String, Vec<u8>>, mut out: W) -> Result<(), LatgenError> {
    let mut buf = String::new();
    for (id, labels) in targets {
        buf.push_str(id);
        buf.push('\t');
        let cells: Vec<&str> = labels.iter().map(|&l| if l == 1 { "1" } else { "0" }).collect();
        buf.push_str(&cells.join(" "));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_targets<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<u8>>, LatgenError> {
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LatgenError::Parse { line: i + 1, message };
        let (id, rest) = line.split_once('\t').ok_or_else(|| err("expected utt<TAB>labels".into()))?;
        let labels = rest
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(err(format!("invalid label {t:?}"))),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        if out.insert(id.to_string(), labels).is_some() {
            return Err(err(format!("duplicate utterance {id:?}")));
        }
    }
    Ok(out)
}
