//! Synthetic toy world with ground-truth acoustics.
//!
//! Classes come in confusable pairs `(2k, 2k+1)`. Words are consonant-vowel-
//! consonant class strings. Sentences open with a topic cue word followed by
//! groups of two shared function words and one topic word:
//! `cue f f c f f c ...`. Topic words of topics `2j` and `2j+1` are minimal
//! pairs differing in one confusable class, so a trigram model cannot tell
//! them apart while the cue word at the start of the sentence can.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltlm_core::seed::derive_seed;
use ltlm_core::{NgramModel, SymbolTable, WordId};

use crate::duration::{DurationModel, Histogram};
use crate::fam::{synthesize_posteriors, FakeAcousticModel, Posteriors};
use crate::graph::{build_alignment_graph, sample_fake_alignment};
use crate::lexicon::Lexicon;
use crate::LatgenError;

pub const NUM_CLASSES: usize = 24;
const CONSONANTS: usize = 12;
/// Class names; consonants first, then vowels, pairs adjacent.
pub const CLASS_NAMES: [char; NUM_CLASSES] = [
    'p', 'b', 't', 'd', 'k', 'g', 'f', 'v', 's', 'z', 'm', 'n', 'a', 'e', 'i', 'y', 'o', 'u', 'l', 'r', 'w', 'j',
    'h', 'x',
];
pub const TOPICS: usize = 4;
pub const FUNCTION_WORDS: usize = 6;
pub const WORDS_PER_TOPIC: usize = 10;

pub fn partner(class: usize) -> usize {
    class ^ 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    /// Posterior mass each class leaks to its partner.
    pub leak: f64,
    /// Dirichlet concentration of frame posteriors.
    pub kappa: f64,
    pub train_sentences: usize,
    pub eval_sentences: usize,
    /// Sentences with ground-truth alignments and posteriors.
    pub labeled_sentences: usize,
    /// Number of `f f c` groups per sentence is drawn from this range.
    pub min_groups: usize,
    pub max_groups: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            leak: 0.4,
            kappa: 4.0,
            train_sentences: 2000,
            eval_sentences: 200,
            labeled_sentences: 200,
            min_groups: 2,
            max_groups: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub config: WorldConfig,
    pub table: SymbolTable,
    pub lexicon: Lexicon,
    pub fam: FakeAcousticModel,
    pub durations: DurationModel,
    pub cues: Vec<WordId>,
    pub function_words: Vec<WordId>,
    /// Topic words; entry `k` of topics `2j` and `2j+1` form a minimal pair.
    pub topic_words: Vec<Vec<WordId>>,
    pub train_texts: Vec<(String, Vec<WordId>)>,
    pub eval_texts: Vec<(String, Vec<WordId>)>,
    pub labeled_alignments: Vec<(String, Vec<u32>)>,
    pub labeled_posteriors: Vec<Posteriors>,
}

type Pron = [u32; 3];

fn random_pron(rng: &mut ChaCha8Rng) -> Pron {
    [
        rng.random_range(0..CONSONANTS as u32),
        rng.random_range(CONSONANTS as u32..NUM_CLASSES as u32),
        rng.random_range(0..CONSONANTS as u32),
    ]
}

fn neighbours(p: &Pron) -> [Pron; 3] {
    let mut out = [*p; 3];
    for (i, n) in out.iter_mut().enumerate() {
        n[i] = partner(n[i] as usize) as u32;
    }
    out
}

fn spelled(p: &Pron) -> String {
    p.iter().map(|&c| CLASS_NAMES[c as usize]).collect()
}

/// Word inventory where no word is one confusable swap away from another,
/// except the designated minimal pairs.
struct Inventory {
    taken: BTreeSet<Pron>,
}

impl Inventory {
    fn free(&self, p: &Pron, allowed: Option<&Pron>) -> bool {
        !self.taken.contains(p) && neighbours(p).iter().all(|n| Some(n) == allowed || !self.taken.contains(n))
    }

    fn claim(&mut self, p: &Pron) {
        self.taken.insert(*p);
        self.taken.extend(neighbours(p));
    }

    fn single(&mut self, rng: &mut ChaCha8Rng) -> Pron {
        loop {
            let p = random_pron(rng);
            if self.free(&p, None) {
                self.claim(&p);
                return p;
            }
        }
    }

    fn pair(&mut self, rng: &mut ChaCha8Rng, position: usize) -> (Pron, Pron) {
        loop {
            let a = random_pron(rng);
            let mut b = a;
            b[position] = partner(b[position] as usize) as u32;
            if self.free(&a, Some(&b)) && self.free(&b, Some(&a)) {
                self.claim(&a);
                self.claim(&b);
                return (a, b);
            }
        }
    }
}

fn duration_law(class: usize) -> Histogram {
    let weights = if class < CONSONANTS {
        BTreeMap::from([(2, 0.5), (3, 0.35), (4, 0.15)])
    } else {
        BTreeMap::from([(2, 0.2), (3, 0.4), (4, 0.3), (5, 0.1)])
    };
    Histogram::from_weights(weights).expect("valid duration law")
}

impl ToyWorld {
    pub fn build(config: WorldConfig) -> Result<Self, LatgenError> {
        if config.min_groups == 0 || config.min_groups > config.max_groups {
            return Err(LatgenError::InvalidModel("need 1 <= min_groups <= max_groups".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "world:lexicon"));
        let mut inv = Inventory { taken: BTreeSet::new() };
        let mut table = SymbolTable::new();
        let mut lexicon = Lexicon::new(NUM_CLASSES);
        let mut add = |table: &mut SymbolTable, p: &Pron| -> Result<WordId, LatgenError> {
            let id = table.add(&spelled(p));
            lexicon.add(id, p.to_vec())?;
            Ok(id)
        };
        let mut cues = Vec::with_capacity(TOPICS);
        for _ in 0..TOPICS {
            let p = inv.single(&mut rng);
            cues.push(add(&mut table, &p)?);
        }
        let mut function_words = Vec::with_capacity(FUNCTION_WORDS);
        for _ in 0..FUNCTION_WORDS {
            let p = inv.single(&mut rng);
            function_words.push(add(&mut table, &p)?);
        }
        let mut topic_words = vec![Vec::with_capacity(WORDS_PER_TOPIC); TOPICS];
        for j in 0..TOPICS / 2 {
            for k in 0..WORDS_PER_TOPIC {
                let (a, b) = inv.pair(&mut rng, k % 3);
                topic_words[2 * j].push(add(&mut table, &a)?);
                topic_words[2 * j + 1].push(add(&mut table, &b)?);
            }
        }
        let fam = FakeAcousticModel::leaky(NUM_CLASSES, config.leak, partner)?;
        let durations = DurationModel::new(
            (0..NUM_CLASSES).map(|c| Some(duration_law(c))).collect(),
            Histogram::from_weights(BTreeMap::from([(2, 1.0), (3, 1.0), (4, 1.0)]))?,
        );
        let mut world = Self {
            config,
            table,
            lexicon,
            fam,
            durations,
            cues,
            function_words,
            topic_words,
            train_texts: Vec::new(),
            eval_texts: Vec::new(),
            labeled_alignments: Vec::new(),
            labeled_posteriors: Vec::new(),
        };
        let c = &world.config;
        world.train_texts = world.sentences("train", c.train_sentences);
        world.eval_texts = world.sentences("eval", c.eval_sentences);
        let labeled = world.sentences("labeled", c.labeled_sentences);
        for (id, words) in &labeled {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(world.config.seed, id));
            let graph = build_alignment_graph(words, &world.lexicon, None, true)?;
            let fali = sample_fake_alignment(&graph, &world.durations, &mut rng, id);
            let post = synthesize_posteriors(&fali.frames, &world.fam, &mut rng, Some(world.config.kappa))?;
            world.labeled_alignments.push((id.clone(), fali.frames));
            world.labeled_posteriors.push(post);
        }
        Ok(world)
    }

    fn sentences(&self, split: &str, n: usize) -> Vec<(String, Vec<WordId>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("world:{split}")));
        (0..n)
            .map(|i| {
                let topic = rng.random_range(0..TOPICS);
                let groups = rng.random_range(self.config.min_groups..=self.config.max_groups);
                let mut words = vec![self.cues[topic]];
                for _ in 0..groups {
                    words.push(*self.function_words.choose(&mut rng).expect("function words"));
                    words.push(*self.function_words.choose(&mut rng).expect("function words"));
                    words.push(*self.topic_words[topic].choose(&mut rng).expect("topic words"));
                }
                (format!("{split}{i:05}"), words)
            })
            .collect()
    }

    /// Acoustic and duration models estimated from the labeled subset.
    pub fn estimated_models(&self) -> Result<(FakeAcousticModel, DurationModel), LatgenError> {
        let fam = FakeAcousticModel::estimate(&self.labeled_alignments, &self.labeled_posteriors, NUM_CLASSES)?;
        let frames: Vec<Vec<u32>> = self.labeled_alignments.iter().map(|(_, f)| f.clone()).collect();
        Ok((fam, DurationModel::estimate(&frames, NUM_CLASSES)?))
    }

    /// N-gram model trained on the training texts.
    pub fn train_lm(&self, order: usize) -> Result<NgramModel, LatgenError> {
        let corpus: Vec<Vec<WordId>> = self.train_texts.iter().map(|(_, w)| w.clone()).collect();
        NgramModel::train(&corpus, order, &self.table)
            .map_err(|e| LatgenError::InvalidModel(format!("n-gram training failed: {e}")))
    }

    pub fn class_name(class: u32) -> Option<char> {
        CLASS_NAMES.get(class as usize).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyWorld {
        ToyWorld::build(WorldConfig {
            train_sentences: 50,
            eval_sentences: 10,
            labeled_sentences: 20,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn vocabulary_shape() {
        let w = small();
        assert_eq!(w.lexicon.len(), TOPICS + FUNCTION_WORDS + TOPICS * WORDS_PER_TOPIC);
        for j in 0..TOPICS / 2 {
            for k in 0..WORDS_PER_TOPIC {
                let a = &w.lexicon.pronunciations(w.topic_words[2 * j][k]).unwrap()[0];
                let b = &w.lexicon.pronunciations(w.topic_words[2 * j + 1][k]).unwrap()[0];
                let diffs: Vec<usize> = (0..3).filter(|&i| a[i] != b[i]).collect();
                assert_eq!(diffs.len(), 1);
                assert_eq!(partner(a[diffs[0]] as usize), b[diffs[0]] as usize);
            }
        }
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(small(), small());
        let other = ToyWorld::build(WorldConfig {
            seed: 1,
            train_sentences: 50,
            eval_sentences: 10,
            labeled_sentences: 20,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(other.train_texts, small().train_texts);
    }

    #[test]
    fn sentences_follow_the_grammar() {
        let w = small();
        for (_, s) in w.train_texts.iter().chain(&w.eval_texts) {
            let topic = w.cues.iter().position(|&c| c == s[0]).unwrap();
            assert_eq!((s.len() - 1) % 3, 0);
            for g in s[1..].chunks(3) {
                assert!(w.function_words.contains(&g[0]) && w.function_words.contains(&g[1]));
                assert!(w.topic_words[topic].contains(&g[2]));
            }
        }
    }
}
