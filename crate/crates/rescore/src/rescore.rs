//! Single-shot lattice rescoring and N-best rescoring with call accounting.

use std::time::Instant;

use ltlm_core::{Lattice, ScoreWeights, WordId};
use ltlm_model::{prepare_lattice, ArLm, ArcBatch, LtLm};

use crate::report::{RescoreReport, UtteranceResult};
use crate::search::{best_path, nbest_extract};
use crate::RescoreError;

/// Probability clamp applied before taking `-ln p`.
pub const PROB_CLAMP: f64 = 1e-6;

/// Rescoring cost of one arc probability.
pub fn arc_cost_from_probability(p: f64) -> f64 {
    -p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// A model that scores every arc of a batch of lattices in one call.
pub trait ArcScorer {
    /// Largest state index + 1 the model accepts.
    fn max_positions(&self) -> usize;
    /// Per-arc probabilities, one vector per lattice.
    fn arc_probabilities(&self, lattices: &[&Lattice]) -> Result<Vec<Vec<f64>>, RescoreError>;
    fn invocations(&self) -> u64;
}

impl ArcScorer for LtLm {
    fn max_positions(&self) -> usize {
        self.config().max_positions
    }

    fn arc_probabilities(&self, lattices: &[&Lattice]) -> Result<Vec<Vec<f64>>, RescoreError> {
        let batch = ArcBatch::from_lattices(lattices, None);
        let p = self.forward(&batch)?;
        Ok(lattices
            .iter()
            .enumerate()
            .map(|(b, l)| p[b * batch.max_arcs..b * batch.max_arcs + l.arcs.len()].to_vec())
            .collect())
    }

    fn invocations(&self) -> u64 {
        LtLm::invocations(self)
    }
}

/// A model that scores one word sequence per call.
pub trait SequenceScorer {
    /// Natural-log probability of the sentence including its end.
    fn log_prob(&self, words: &[WordId]) -> Result<f64, RescoreError>;
    fn invocations(&self) -> u64;
}

impl SequenceScorer for ArLm {
    fn log_prob(&self, words: &[WordId]) -> Result<f64, RescoreError> {
        Ok(self.ar_score(words)?)
    }

    fn invocations(&self) -> u64 {
        ArLm::invocations(self)
    }
}

/// Scores every arc with `scorer`, `batch_size` lattices per call, and picks
/// the best path under `a*ac + l1*lm + l2*(-ln p)`. Lattices are augmented
/// first when needed. Lattices that do not fit the model are skipped.
pub fn single_shot_rescore<S: ArcScorer + ?Sized>(
    lattices: &[Lattice],
    scorer: &S,
    weights: &ScoreWeights,
    batch_size: usize,
) -> Result<RescoreReport, RescoreError> {
    let start = Instant::now();
    let calls_before = scorer.invocations();
    let mut report = RescoreReport::new("single-shot");
    let mut ready = Vec::new();
    for lat in lattices {
        match prepare_lattice(lat) {
            Ok(aug) if aug.num_states <= scorer.max_positions() => ready.push(aug),
            Ok(aug) => report.skipped.push((
                lat.utterance_id.clone(),
                format!("{} states exceed the {}-row position table", aug.num_states, scorer.max_positions()),
            )),
            Err(e) => report.skipped.push((lat.utterance_id.clone(), e.to_string())),
        }
    }
    let first_pass = ScoreWeights { l2: 0.0, ..*weights };
    for chunk in ready.chunks(batch_size.max(1)) {
        let refs: Vec<&Lattice> = chunk.iter().collect();
        let probs = scorer.arc_probabilities(&refs)?;
        report.call_lengths.push(chunk.iter().map(|l| l.arcs.len()).sum());
        for (lat, p) in chunk.iter().zip(probs) {
            let extra: Vec<f64> = p.iter().map(|&v| weights.l2 * arc_cost_from_probability(v)).collect();
            let best = best_path(lat, weights, Some(&extra))?;
            let fp = best_path(lat, &first_pass, None)?;
            report.utterances.push(UtteranceResult {
                utterance_id: lat.utterance_id.clone(),
                words: best.words,
                cost: best.cost,
                first_pass_words: fp.words,
                first_pass_cost: fp.cost,
            });
        }
    }
    report.model_calls = scorer.invocations() - calls_before;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Extracts up to `n` hypotheses per lattice, scores each with one call of
/// `scorer`, and re-ranks by `a*ac + l1*lm + l2*(-log P)`.
pub fn nbest_rescore<S: SequenceScorer + ?Sized>(
    lattices: &[Lattice],
    scorer: &S,
    n: usize,
    weights: &ScoreWeights,
) -> Result<RescoreReport, RescoreError> {
    let start = Instant::now();
    let calls_before = scorer.invocations();
    let mut report = RescoreReport::new(&format!("{n}-best"));
    for lat in lattices {
        let hyps = nbest_extract(lat, n, weights)?;
        if hyps.is_empty() {
            report.skipped.push((lat.utterance_id.clone(), "no complete path".into()));
            continue;
        }
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (i, h) in hyps.iter().enumerate() {
            let lp = scorer.log_prob(&h.words)?;
            report.call_lengths.push(h.words.len() + 1);
            let c = h.cost + weights.l2 * -lp;
            if c < best_cost {
                best_cost = c;
                best = i;
            }
        }
        report.utterances.push(UtteranceResult {
            utterance_id: lat.utterance_id.clone(),
            words: hyps[best].words.clone(),
            cost: best_cost,
            first_pass_words: hyps[0].words.clone(),
            first_pass_cost: hyps[0].cost,
        });
    }
    report.model_calls = scorer.invocations() - calls_before;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// First-pass best paths only; no model calls.
pub fn first_pass_report(lattices: &[Lattice], weights: &ScoreWeights) -> Result<RescoreReport, RescoreError> {
    let start = Instant::now();
    let first_pass = ScoreWeights { l2: 0.0, ..*weights };
    let mut report = RescoreReport::new("first-pass");
    for lat in lattices {
        match best_path(lat, &first_pass, None) {
            Ok(h) => report.utterances.push(UtteranceResult {
                utterance_id: lat.utterance_id.clone(),
                words: h.words.clone(),
                cost: h.cost,
                first_pass_words: h.words,
                first_pass_cost: h.cost,
            }),
            Err(e) => report.skipped.push((lat.utterance_id.clone(), e.to_string())),
        }
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
