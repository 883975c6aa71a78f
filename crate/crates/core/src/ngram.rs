//! Witten-Bell backoff n-gram language model with ARPA text serialization.
//!
//! Probabilities are stored as log10 values exactly as they appear on disk,
//! so reading and writing ARPA files is lossless; every scoring API returns
//! natural-log values (nats).
//!
//! Training uses interpolated Witten-Bell estimates written in backoff form:
//! for a history `h` with `N(h)` tokens and `T(h)` distinct successors,
//!
//! ```text
//! P(w | h) = (c(h, w) + T(h) P(w | h')) / (N(h) + T(h))   for seen (h, w)
//! P(w | h) = bo(h) P(w | h')                              otherwise
//! bo(h)    = T(h) / (N(h) + T(h))
//! ```
//!
//! where `h'` drops the oldest word of `h`. The unigram level interpolates
//! with a uniform distribution over the vocabulary (all ordinary words plus
//! `</s>` and `<unk>`), so unseen words keep a non-zero floor.

use std::collections::HashMap;
use std::f64::consts::LN_10;
use std::io::{Read, Write};

use thiserror::Error;

use crate::symbols::{SymbolTable, WordId, BOS, EOS, UNK};

/// log10 probability written for `<s>`, which is never predicted.
const BOS_LOG10_PROB: f64 = -99.0;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("order must be between 1 and 4, got {0}")]
    InvalidOrder(usize),
    #[error("malformed ARPA file at line {line}: {message}")]
    MalformedArpa { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    pub log10_prob: f64,
    /// 0.0 (probability 1) when absent.
    pub log10_backoff: f64,
}

/// Opaque LM history: index of a stored context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NgramState(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab: SymbolTable,
    /// `tables[n - 1]` holds the n-grams.
    tables: Vec<HashMap<Vec<WordId>, NgramEntry>>,
    contexts: Vec<Vec<WordId>>,
    context_ids: HashMap<Vec<WordId>, u32>,
}

impl NgramModel {
    fn from_tables(
        order: usize,
        vocab: SymbolTable,
        tables: Vec<HashMap<Vec<WordId>, NgramEntry>>,
    ) -> Self {
        let mut model = Self {
            order,
            vocab,
            tables,
            contexts: vec![Vec::new()],
            context_ids: HashMap::new(),
        };
        model.context_ids.insert(Vec::new(), 0);
        // A history is a usable context when it can change a prediction:
        // it has a backoff weight or prefixes a longer stored n-gram.
        let mut usable: Vec<Vec<WordId>> = Vec::new();
        for n in 1..order {
            let prefixes: std::collections::HashSet<&[WordId]> =
                model.tables[n].keys().map(|g| &g[..n]).collect();
            for (gram, e) in &model.tables[n - 1] {
                if e.log10_backoff != 0.0 || prefixes.contains(&gram[..]) {
                    usable.push(gram.clone());
                }
            }
        }
        usable.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        for h in usable {
            let id = model.contexts.len() as u32;
            model.context_ids.insert(h.clone(), id);
            model.contexts.push(h);
        }
        model
    }

    /// Trains a Witten-Bell model. Sentences are wrapped in `<s> ... </s>`;
    /// word ids outside `vocab` are mapped to `<unk>`.
    pub fn train(corpus: &[Vec<WordId>], order: usize, vocab: &SymbolTable) -> Result<Self, NgramError> {
        if !(1..=4).contains(&order) {
            return Err(NgramError::InvalidOrder(order));
        }
        if corpus.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let mut counts: Vec<HashMap<Vec<WordId>, u64>> = vec![HashMap::new(); order];
        for sentence in corpus {
            let mut toks = Vec::with_capacity(sentence.len() + 2);
            toks.push(BOS);
            toks.extend(sentence.iter().map(|&w| {
                if w > UNK && vocab.token(w).is_some() {
                    w
                } else {
                    UNK
                }
            }));
            toks.push(EOS);
            for i in 1..toks.len() {
                for n in 1..=order.min(i + 1) {
                    *counts[n - 1].entry(toks[i + 1 - n..=i].to_vec()).or_insert(0) += 1;
                }
            }
        }

        let mut model_vocab: Vec<WordId> = vocab.word_ids().collect();
        model_vocab.push(EOS);
        model_vocab.push(UNK);
        model_vocab.sort_unstable();
        let v = model_vocab.len() as f64;

        let mut tables: Vec<HashMap<Vec<WordId>, NgramEntry>> = vec![HashMap::new(); order];
        // Unigrams: interpolate with the uniform distribution.
        let n0: u64 = counts[0].values().sum();
        let t0 = counts[0].len() as u64;
        let denom = (n0 + t0) as f64;
        for &w in &model_vocab {
            let c = counts[0].get(&vec![w]).copied().unwrap_or(0) as f64;
            let p = (c + t0 as f64 / v) / denom;
            tables[0].insert(
                vec![w],
                NgramEntry {
                    log10_prob: p.log10(),
                    log10_backoff: 0.0,
                },
            );
        }
        tables[0].insert(
            vec![BOS],
            NgramEntry {
                log10_prob: BOS_LOG10_PROB,
                log10_backoff: 0.0,
            },
        );

        for n in 2..=order {
            // Per-history totals and distinct successor counts.
            let mut hist: HashMap<&[WordId], (u64, u64)> = HashMap::new();
            for (gram, &c) in &counts[n - 1] {
                let e = hist.entry(&gram[..n - 1]).or_insert((0, 0));
                e.0 += c;
                e.1 += 1;
            }
            let partial = NgramModel::from_tables(n - 1, vocab.clone(), tables.clone());
            let mut grams: Vec<(&Vec<WordId>, &u64)> = counts[n - 1].iter().collect();
            grams.sort();
            let mut new_entries = HashMap::new();
            for (gram, &c) in grams {
                let (nh, th) = hist[&gram[..n - 1]];
                let lower = partial.log10_prob_of(&gram[1..n - 1], gram[n - 1]);
                let p = (c as f64 + th as f64 * 10f64.powf(lower)) / (nh + th) as f64;
                new_entries.insert(
                    gram.clone(),
                    NgramEntry {
                        log10_prob: p.log10(),
                        log10_backoff: 0.0,
                    },
                );
            }
            for (h, (nh, th)) in hist {
                let bo = (th as f64 / (nh + th) as f64).log10();
                if let Some(e) = tables[n - 2].get_mut(h) {
                    e.log10_backoff = bo;
                }
            }
            tables[n - 1] = new_entries;
        }
        Ok(Self::from_tables(order, vocab.clone(), tables))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &SymbolTable {
        &self.vocab
    }

    pub fn entry(&self, gram: &[WordId]) -> Option<&NgramEntry> {
        if gram.is_empty() || gram.len() > self.order {
            return None;
        }
        self.tables[gram.len() - 1].get(gram)
    }

    /// Number of stored n-grams per order.
    pub fn counts(&self) -> Vec<usize> {
        self.tables.iter().map(HashMap::len).collect()
    }

    fn normalize_word(&self, w: WordId) -> WordId {
        if self.tables[0].contains_key(&vec![w]) && w != BOS {
            w
        } else {
            UNK
        }
    }

    /// Backoff evaluation of `log10 P(w | history)`.
    fn log10_prob_of(&self, history: &[WordId], w: WordId) -> f64 {
        let w = self.normalize_word(w);
        let start = history.len().saturating_sub(self.order - 1);
        let history = &history[start..];
        let mut backoff = 0.0;
        let mut key: Vec<WordId> = Vec::with_capacity(history.len() + 1);
        for k in 0..=history.len() {
            let h = &history[k..];
            key.clear();
            key.extend_from_slice(h);
            key.push(w);
            if let Some(e) = self.tables[h.len()].get(&key) {
                return backoff + e.log10_prob;
            }
            if !h.is_empty() {
                if let Some(e) = self.tables[h.len() - 1].get(h) {
                    backoff += e.log10_backoff;
                }
            }
        }
        unreachable!("every normalized word has a unigram entry")
    }

    /// Natural-log probability of `w` given an explicit word history.
    pub fn log_prob(&self, history: &[WordId], w: WordId) -> f64 {
        self.log10_prob_of(history, w) * LN_10
    }

    /// State after `<s>`.
    pub fn initial_state(&self) -> NgramState {
        self.state_for(&[BOS])
    }

    /// The empty-history state.
    pub fn null_state(&self) -> NgramState {
        NgramState(0)
    }

    /// Longest suffix of `history` (at most `order - 1` words) that is a
    /// stored context.
    pub fn state_for(&self, history: &[WordId]) -> NgramState {
        let start = history.len().saturating_sub(self.order.saturating_sub(1));
        for k in start..=history.len() {
            if let Some(&id) = self.context_ids.get(&history[k..]) {
                return NgramState(id);
            }
        }
        NgramState(0)
    }

    pub fn context_words(&self, state: NgramState) -> &[WordId] {
        &self.contexts[state.0 as usize]
    }

    /// Scores one word and advances the history. Returns the natural-log
    /// probability and the next state.
    pub fn score_step(&self, state: NgramState, w: WordId) -> (f64, NgramState) {
        let h = &self.contexts[state.0 as usize];
        let w = self.normalize_word(w);
        let lp = self.log10_prob_of(h, w) * LN_10;
        let mut next = Vec::with_capacity(h.len() + 1);
        next.extend_from_slice(h);
        next.push(w);
        (lp, self.state_for(&next))
    }

    /// Total natural-log probability of `<s> words </s>`.
    pub fn score_sentence(&self, words: &[WordId]) -> f64 {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for &w in words.iter().chain(std::iter::once(&EOS)) {
            let (lp, next) = self.score_step(state, w);
            total += lp;
            state = next;
        }
        total
    }

    /// Words that can be predicted: the whole unigram table except `<s>`.
    pub fn predictable_words(&self) -> Vec<WordId> {
        let mut ws: Vec<WordId> = self.tables[0]
            .keys()
            .map(|g| g[0])
            .filter(|&w| w != BOS)
            .collect();
        ws.sort_unstable();
        ws
    }

    /// All histories that carry statistics, including the empty one.
    pub fn contexts(&self) -> &[Vec<WordId>] {
        &self.contexts
    }

    /// Writes the model in ARPA format (log10 values).
    pub fn write_arpa<W: Write>(&self, mut out: W) -> Result<(), NgramError> {
        let mut buf = String::from("\n\\data\\\n");
        for (n, t) in self.tables.iter().enumerate() {
            buf.push_str(&format!("ngram {}={}\n", n + 1, t.len()));
        }
        for (n, t) in self.tables.iter().enumerate() {
            buf.push_str(&format!("\n\\{}-grams:\n", n + 1));
            let mut grams: Vec<(&Vec<WordId>, &NgramEntry)> = t.iter().collect();
            grams.sort_by(|a, b| a.0.cmp(b.0));
            for (gram, e) in grams {
                let words: Vec<&str> = gram
                    .iter()
                    .map(|&w| self.vocab.token(w).unwrap_or("<unk>"))
                    .collect();
                buf.push_str(&format!("{}\t{}", e.log10_prob, words.join(" ")));
                if n + 1 < self.order && e.log10_backoff != 0.0 {
                    buf.push_str(&format!("\t{}", e.log10_backoff));
                }
                buf.push('\n');
            }
        }
        buf.push_str("\n\\end\\\n");
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    /// Reads an ARPA file. Every word must be present in `vocab`.
    pub fn read_arpa<R: Read>(mut reader: R, vocab: &SymbolTable) -> Result<Self, NgramError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let bad = |line: usize, message: &str| NgramError::MalformedArpa {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut declared: Vec<usize> = Vec::new();
        // Header.
        loop {
            let Some((ln, l)) = lines.next() else {
                return Err(bad(0, "missing \\data\\ section"));
            };
            if l.is_empty() {
                continue;
            }
            if l == "\\data\\" {
                break;
            }
            return Err(bad(ln, "expected \\data\\"));
        }
        let mut section: Option<(usize, usize)> = None;
        for (ln, l) in lines.by_ref() {
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("ngram ") {
                let (n, c) = rest.split_once('=').ok_or_else(|| bad(ln, "bad count line"))?;
                let n: usize = n.trim().parse().map_err(|_| bad(ln, "bad order"))?;
                let c: usize = c.trim().parse().map_err(|_| bad(ln, "bad count"))?;
                if n != declared.len() + 1 {
                    return Err(bad(ln, "orders must be declared in sequence"));
                }
                declared.push(c);
                continue;
            }
            section = Some((ln, parse_section_header(l).ok_or_else(|| bad(ln, "expected ngram count or section header"))?));
            break;
        }
        let order = declared.len();
        if !(1..=4).contains(&order) {
            return Err(bad(0, "model order must be between 1 and 4"));
        }
        let mut tables: Vec<HashMap<Vec<WordId>, NgramEntry>> = vec![HashMap::new(); order];
        let mut current = match section {
            Some((_, 1)) => 1,
            Some((ln, _)) => return Err(bad(ln, "expected \\1-grams:")),
            None => return Err(bad(0, "missing n-gram sections")),
        };
        let mut ended = false;
        for (ln, l) in lines.by_ref() {
            if l.is_empty() {
                continue;
            }
            if l == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(n) = parse_section_header(l) {
                if tables[current - 1].len() != declared[current - 1] {
                    return Err(bad(ln, "n-gram count does not match header"));
                }
                if n != current + 1 || n > order {
                    return Err(bad(ln, "unexpected section"));
                }
                current = n;
                continue;
            }
            let parts: Vec<&str> = l.split('\t').collect();
            let (prob, words, backoff) = match parts.as_slice() {
                [p, w] => (*p, *w, None),
                [p, w, b] => (*p, *w, Some(*b)),
                _ => return Err(bad(ln, "expected prob<TAB>words[<TAB>backoff]")),
            };
            let log10_prob: f64 = prob.parse().map_err(|_| bad(ln, "bad probability"))?;
            let log10_backoff: f64 = match backoff {
                Some(b) => b.parse().map_err(|_| bad(ln, "bad backoff"))?,
                None => 0.0,
            };
            if !log10_prob.is_finite() || log10_prob > 0.0 || !log10_backoff.is_finite() {
                return Err(bad(ln, "probabilities must be finite log10 values <= 0"));
            }
            let gram: Vec<WordId> = words
                .split(' ')
                .map(|w| vocab.id(w).ok_or_else(|| bad(ln, &format!("word {w:?} not in vocabulary"))))
                .collect::<Result<_, _>>()?;
            if gram.len() != current {
                return Err(bad(ln, "n-gram length does not match section"));
            }
            if tables[current - 1]
                .insert(gram, NgramEntry { log10_prob, log10_backoff })
                .is_some()
            {
                return Err(bad(ln, "duplicate n-gram"));
            }
        }
        if !ended {
            return Err(bad(0, "missing \\end\\"));
        }
        if current != order || tables[current - 1].len() != declared[current - 1] {
            return Err(bad(0, "n-gram count does not match header"));
        }
        if !tables[0].contains_key(&vec![UNK]) {
            return Err(bad(0, "unigram table lacks <unk>"));
        }
        Ok(Self::from_tables(order, vocab.clone(), tables))
    }
}

fn parse_section_header(l: &str) -> Option<usize> {
    l.strip_prefix('\\')?.strip_suffix("-grams:")?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn setup(sentences: &[&str]) -> (SymbolTable, Vec<Vec<WordId>>) {
        let mut t = SymbolTable::new();
        let corpus = sentences
            .iter()
            .map(|s| s.split_whitespace().map(|w| t.add(w)).collect())
            .collect();
        (t, corpus)
    }

    fn total_mass(m: &NgramModel, history: &[WordId]) -> f64 {
        m.predictable_words()
            .iter()
            .map(|&w| m.log_prob(history, w).exp())
            .sum()
    }

    #[test]
    fn hand_computed_bigram() {
        let (t, corpus) = setup(&["a b", "a b"]);
        let m = NgramModel::train(&corpus, 2, &t).unwrap();
        let (a, b) = (t.id("a").unwrap(), t.id("b").unwrap());
        // Unigrams: N = 6, T = 3, |V| = 4 (a, b, </s>, <unk>).
        let p_b = (2.0 + 3.0 / 4.0) / 9.0;
        assert_abs_diff_eq!(m.log_prob(&[], b).exp(), p_b, epsilon = 1e-12);
        assert_abs_diff_eq!(m.log_prob(&[], UNK).exp(), 0.75 / 9.0, epsilon = 1e-12);
        // History "a": N = 2, T = 1.
        let p_b_a = (2.0 + p_b) / 3.0;
        assert_abs_diff_eq!(m.log_prob(&[a], b).exp(), p_b_a, epsilon = 1e-12);
        let p_a = (2.0 + 0.75) / 9.0;
        assert_abs_diff_eq!(m.log_prob(&[a], a).exp(), p_a / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(total_mass(&m, &[a]), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn every_context_is_normalized() {
        let (t, corpus) = setup(&[
            "the cat sat on the mat",
            "the dog sat",
            "a cat and a dog",
            "the mat",
        ]);
        for order in 1..=4 {
            let m = NgramModel::train(&corpus, order, &t).unwrap();
            for h in m.contexts() {
                assert_abs_diff_eq!(total_mass(&m, h), 1.0, epsilon = 1e-6);
            }
            for n in 1..=order {
                for (gram, e) in &m.tables[n - 1] {
                    assert!(e.log10_prob <= 0.0, "{gram:?}");
                }
            }
        }
    }

    #[test]
    fn unigram_model_is_context_free() {
        let (t, corpus) = setup(&["a b c", "b c"]);
        let m = NgramModel::train(&corpus, 1, &t).unwrap();
        let s = [t.id("a").unwrap(), t.id("c").unwrap()];
        let expected = m.log_prob(&[], s[0]) + m.log_prob(&[], s[1]) + m.log_prob(&[], EOS);
        assert_abs_diff_eq!(m.score_sentence(&s), expected, epsilon = 1e-12);
    }

    #[test]
    fn seen_beats_unseen() {
        let (t, corpus) = setup(&["a"]);
        let m = NgramModel::train(&corpus, 3, &t).unwrap();
        let s = m.initial_state();
        assert!(m.score_step(s, t.id("a").unwrap()).0 > m.score_step(s, UNK).0);
    }

    #[test]
    fn steps_telescope_to_sentence_score() {
        let (t, corpus) = setup(&["x y z", "y z x y", "z z"]);
        let m = NgramModel::train(&corpus, 3, &t).unwrap();
        let s: Vec<WordId> = ["x", "y", "z", "x"].iter().map(|w| t.id(w).unwrap()).collect();
        let mut state = m.initial_state();
        let mut total = 0.0;
        let mut history = vec![BOS];
        for &w in s.iter().chain([EOS].iter()) {
            let (lp, next) = m.score_step(state, w);
            assert_abs_diff_eq!(lp, m.log_prob(&history, w), epsilon = 1e-12);
            history.push(w);
            total += lp;
            state = next;
        }
        assert_abs_diff_eq!(total, m.score_sentence(&s), epsilon = 1e-12);
    }

    #[test]
    fn unseen_word_chains_backoffs() {
        let (mut t, corpus) = setup(&["a b c", "a b d", "b c"]);
        let u = t.add("u");
        let m = NgramModel::train(&corpus, 3, &t).unwrap();
        let (a, b) = (t.id("a").unwrap(), t.id("b").unwrap());
        let bo_ab = m.entry(&[a, b]).unwrap().log10_backoff;
        let bo_b = m.entry(&[b]).unwrap().log10_backoff;
        let p_u = m.entry(&[u]).unwrap().log10_prob;
        let (lp, _) = m.score_step(m.state_for(&[a, b]), u);
        assert_abs_diff_eq!(lp, (bo_ab + bo_b + p_u) * LN_10, epsilon = 1e-12);
        // A stored trigram is returned as is.
        let c = t.id("c").unwrap();
        let (lp, _) = m.score_step(m.state_for(&[a, b]), c);
        assert_abs_diff_eq!(lp, m.entry(&[a, b, c]).unwrap().log10_prob * LN_10, epsilon = 1e-15);
    }

    #[test]
    fn out_of_vocabulary_ids_map_to_unk() {
        let (t, corpus) = setup(&["a b"]);
        let m = NgramModel::train(&corpus, 2, &t).unwrap();
        let s = m.initial_state();
        assert_eq!(m.score_step(s, 999).0, m.score_step(s, UNK).0);
        assert!(m.score_sentence(&[999, 999]).is_finite());
    }

    #[test]
    fn empty_corpus_and_bad_order() {
        let t = SymbolTable::new();
        assert!(matches!(NgramModel::train(&[], 3, &t), Err(NgramError::EmptyCorpus)));
        assert!(matches!(
            NgramModel::train(&[vec![]], 5, &t),
            Err(NgramError::InvalidOrder(5))
        ));
    }

    #[test]
    fn arpa_round_trip_is_exact() {
        let (t, corpus) = setup(&["the cat sat", "the dog sat down", "a cat"]);
        let m = NgramModel::train(&corpus, 3, &t).unwrap();
        let mut out = Vec::new();
        m.write_arpa(&mut out).unwrap();
        let back = NgramModel::read_arpa(out.as_slice(), &t).unwrap();
        assert_eq!(back.tables, m.tables);
        assert_eq!(back.contexts, m.contexts);
        let mut again = Vec::new();
        back.write_arpa(&mut again).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn arpa_count_mismatch_is_rejected() {
        let (t, corpus) = setup(&["a b"]);
        let m = NgramModel::train(&corpus, 2, &t).unwrap();
        let mut out = Vec::new();
        m.write_arpa(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap().replace("ngram 2=", "ngram 2=9");
        assert!(matches!(
            NgramModel::read_arpa(text.as_bytes(), &t),
            Err(NgramError::MalformedArpa { .. })
        ));
        assert!(matches!(
            NgramModel::read_arpa("junk".as_bytes(), &t),
            Err(NgramError::MalformedArpa { .. })
        ));
    }
}
