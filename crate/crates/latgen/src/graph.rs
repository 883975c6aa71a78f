//! Sentence-level class graphs and fake alignment sampling.

use rand::Rng;

use ltlm_core::{SymbolTable, WordId};

use crate::duration::DurationModel;
use crate::lexicon::{spell, Lexicon};
use crate::LatgenError;

/// Arc of an [`AlignmentGraph`]. `word_end` is set on the last arc of each
/// pronunciation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphArc {
    pub src: usize,
    pub dst: usize,
    pub class: u32,
    pub word_end: Option<WordId>,
}

/// A linear word chain where every word is expanded into one branch per
/// pronunciation. State `word_states[i]` starts word `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGraph {
    pub words: Vec<WordId>,
    pub prons: Vec<Vec<Vec<u32>>>,
    pub arcs: Vec<GraphArc>,
    pub word_states: Vec<usize>,
    pub final_state: usize,
    pub num_states: usize,
}

impl AlignmentGraph {
    /// Number of distinct class paths (product of pronunciation counts).
    pub fn num_paths(&self) -> u128 {
        self.prons.iter().map(|p| p.len() as u128).product()
    }
}

/// Expands `words` with the lexicon. Unknown words are an error in strict
/// mode and are spelled class by class otherwise.
pub fn build_alignment_graph(
    words: &[WordId],
    lexicon: &Lexicon,
    table: Option<&SymbolTable>,
    strict: bool,
) -> Result<AlignmentGraph, LatgenError> {
    let token = |w: WordId| table.and_then(|t| t.token(w)).map_or_else(|| w.to_string(), str::to_string);
    let mut prons = Vec::with_capacity(words.len());
    for &w in words {
        match lexicon.pronunciations(w) {
            Some(p) => prons.push(p.to_vec()),
            None if strict => return Err(LatgenError::UnpronounceableWord(token(w))),
            None => prons.push(vec![spell(&token(w), lexicon.num_classes())]),
        }
    }
    let mut arcs = Vec::new();
    let mut word_states = Vec::with_capacity(words.len());
    let mut next_state = 1;
    let mut start = 0;
    for (&w, word_prons) in words.iter().zip(&prons) {
        word_states.push(start);
        let end = next_state;
        next_state += 1;
        for pron in word_prons {
            let mut src = start;
            for (k, &class) in pron.iter().enumerate() {
                let last = k + 1 == pron.len();
                let dst = if last {
                    end
                } else {
                    next_state += 1;
                    next_state - 1
                };
                arcs.push(GraphArc {
                    src,
                    dst,
                    class,
                    word_end: last.then_some(w),
                });
                src = dst;
            }
        }
        start = end;
    }
    Ok(AlignmentGraph {
        words: words.to_vec(),
        prons,
        arcs,
        word_states,
        final_state: start,
        num_states: next_state,
    })
}

/// Frame-level class sequence with word spans (`start..end` frames).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FakeAlignment {
    pub utterance_id: String,
    pub frames: Vec<u32>,
    /// Merged runs as `(class, frames)` in order.
    pub runs: Vec<(u32, u32)>,
    /// Pronunciation index chosen per word.
    pub choices: Vec<usize>,
    /// Word spans. A run shared by two words after merging belongs to the
    /// earlier word, so a later span may be empty.
    pub word_spans: Vec<(WordId, usize, usize)>,
}

/// Picks a pronunciation per word uniformly, merges adjacent identical
/// classes into one run and stretches every merged run by a duration drawn
/// for its class.
pub fn sample_fake_alignment<R: Rng + ?Sized>(
    graph: &AlignmentGraph,
    durations: &DurationModel,
    rng: &mut R,
    utterance_id: &str,
) -> FakeAlignment {
    let choices: Vec<usize> = graph.prons.iter().map(|p| rng.random_range(0..p.len())).collect();
    let mut runs: Vec<u32> = Vec::new();
    let mut last_run_of_word = Vec::with_capacity(graph.words.len());
    for (prons, &c) in graph.prons.iter().zip(&choices) {
        for &class in &prons[c] {
            if runs.last() != Some(&class) {
                runs.push(class);
            }
        }
        last_run_of_word.push(runs.len());
    }
    let lengths: Vec<u32> = runs.iter().map(|&class| durations.sample(class, rng)).collect();
    let mut frames = Vec::with_capacity(lengths.iter().map(|&n| n as usize).sum());
    let mut run_end_frame = Vec::with_capacity(runs.len());
    for (&class, &n) in runs.iter().zip(&lengths) {
        frames.extend(std::iter::repeat_n(class, n as usize));
        run_end_frame.push(frames.len());
    }
    let mut word_spans = Vec::with_capacity(graph.words.len());
    let mut start = 0;
    for (&w, &k) in graph.words.iter().zip(&last_run_of_word) {
        let end = if k == 0 { 0 } else { run_end_frame[k - 1] };
        word_spans.push((w, start, end));
        start = end;
    }
    FakeAlignment {
        utterance_id: utterance_id.to_string(),
        frames,
        runs: runs.into_iter().zip(lengths).collect(),
        choices,
        word_spans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duration::Histogram;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lexicon() -> Lexicon {
        let mut lex = Lexicon::new(10);
        lex.add(4, vec![1, 2, 3]).unwrap();
        lex.add(5, vec![4, 5]).unwrap();
        lex.add(5, vec![4, 6]).unwrap();
        lex.add(6, vec![3, 7]).unwrap();
        lex
    }

    #[test]
    fn graph_shapes() {
        let g = build_alignment_graph(&[4], &lexicon(), None, true).unwrap();
        assert_eq!(g.arcs.len(), 3);
        assert_eq!(g.num_paths(), 1);
        let g = build_alignment_graph(&[4, 5, 5], &lexicon(), None, true).unwrap();
        assert_eq!(g.num_paths(), 4);
        assert_eq!(g.arcs.iter().filter(|a| a.word_end.is_some()).count(), 5);
        assert!(matches!(
            build_alignment_graph(&[9], &lexicon(), None, true),
            Err(LatgenError::UnpronounceableWord(_))
        ));
        let spelled = build_alignment_graph(&[9], &lexicon(), None, false).unwrap();
        assert_eq!(spelled.prons[0][0], spell("9", 10));
    }

    #[test]
    fn deterministic_stretch() {
        let g = build_alignment_graph(&[4], &lexicon(), None, true).unwrap();
        let mut per_class = vec![None; 10];
        per_class[1] = Some(Histogram::point(2));
        per_class[2] = Some(Histogram::point(3));
        per_class[3] = Some(Histogram::point(2));
        let d = DurationModel::new(per_class, Histogram::point(1));
        let fa = sample_fake_alignment(&g, &d, &mut ChaCha8Rng::seed_from_u64(0), "u");
        assert_eq!(fa.frames, vec![1, 1, 2, 2, 2, 3, 3]);
        assert_eq!(fa.word_spans, vec![(4, 0, 7)]);
    }

    #[test]
    fn identical_classes_across_words_merge() {
        let g = build_alignment_graph(&[4, 6], &lexicon(), None, true).unwrap();
        let d = DurationModel::new(vec![None; 10], Histogram::point(2));
        let fa = sample_fake_alignment(&g, &d, &mut ChaCha8Rng::seed_from_u64(0), "u");
        assert_eq!(fa.runs, vec![(1, 2), (2, 2), (3, 2), (7, 2)]);
        assert_eq!(fa.word_spans, vec![(4, 0, 6), (6, 6, 8)]);
    }
}
