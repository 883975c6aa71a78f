//! Word error counting and oracle paths through lattices.
//!
//! The oracle search runs a dynamic program over the grid of
//! (lattice state, reference position). An arc `x -> y` labelled `w` moves
//! `(x, i)` to `(y, i + 1)` at cost `[w != ref[i]]` (match or substitution) or
//! to `(y, i)` at cost 1 (insertion); a deletion moves `(s, i)` to
//! `(s, i + 1)` at cost 1. Auxiliary symbols move `(x, i)` to `(y, i)` for
//! free.
//!
//! Ties between oracle paths are broken uniformly at random over distinct
//! arc paths: a derivation is drawn uniformly among all minimal derivations
//! using per-cell counts, then accepted with probability `1 / m`, where `m` is
//! the number of minimal derivations of the drawn path.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use rand::Rng;
use thiserror::Error;

use crate::lattice::{Lattice, LatticeError};
use crate::symbols::{is_auxiliary, WordId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("no reference for utterance {0:?}")]
    MissingReference(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Word error rate in percent. An empty reference scores 0 when there
    /// are no errors and infinity otherwise.
    pub fn wer(&self) -> f64 {
        if self.ref_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            100.0 * self.errors() as f64 / self.ref_len as f64
        }
    }
}

impl Add for EditStats {
    type Output = EditStats;
    fn add(self, o: EditStats) -> EditStats {
        EditStats {
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl AddAssign for EditStats {
    fn add_assign(&mut self, o: EditStats) {
        *self = *self + o;
    }
}

/// Levenshtein alignment of a hypothesis against a reference. On ties the
/// backtrace prefers substitution, then insertion, then deletion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditStats {
    let (m, n) = (hyp.len(), reference.len());
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for j in 0..=n {
        d[j] = j;
    }
    for i in 1..=m {
        d[i * w] = i;
        for j in 1..=n {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let ins = d[(i - 1) * w + j] + 1;
            let del = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut stats = EditStats {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let cur = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(hyp[i - 1] != reference[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == cur {
                stats.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == cur {
            stats.insertions += 1;
            i -= 1;
        } else {
            stats.deletions += 1;
            j -= 1;
        }
    }
    stats
}

/// Oracle labels for one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcTargets {
    /// 1 for arcs on the oracle path, 0 otherwise; aligned with `Lattice::arcs`.
    pub labels: Vec<u8>,
    /// Arc indices of the oracle path from the initial state to a final state.
    pub oracle_path: Vec<usize>,
    pub oracle_stats: EditStats,
}

impl ArcTargets {
    pub fn from_path(lattice: &Lattice, path: Vec<usize>, reference: &[WordId]) -> Self {
        let mut labels = vec![0u8; lattice.arcs.len()];
        for &a in &path {
            labels[a] = 1;
        }
        let words: Vec<WordId> = path
            .iter()
            .map(|&a| lattice.arcs[a].word)
            .filter(|&w| !is_auxiliary(w))
            .collect();
        ArcTargets {
            labels,
            oracle_path: path,
            oracle_stats: edit_distance(&words, reference),
        }
    }
}

const INF: u32 = u32::MAX / 2;

struct OracleGrid {
    width: usize,
    cost: Vec<u32>,
    count: Vec<f64>,
}

fn check_sorted(lattice: &Lattice) -> Result<(), LatticeError> {
    if lattice.num_states == 0 || lattice.initial_state >= lattice.num_states {
        return Err(LatticeError::NoInitialState);
    }
    if lattice.final_states.is_empty() {
        return Err(LatticeError::NoFinalState);
    }
    if !lattice.is_topologically_sorted() || lattice.arcs.iter().any(|a| a.dst >= lattice.num_states)
    {
        return Err(LatticeError::MalformedLattice(
            "oracle search needs a topologically sorted lattice".into(),
        ));
    }
    Ok(())
}

fn oracle_grid(lattice: &Lattice, reference: &[WordId], inc: &[Vec<usize>]) -> OracleGrid {
    let n = reference.len();
    let width = n + 1;
    let mut cost = vec![INF; lattice.num_states * width];
    let mut count = vec![0.0f64; lattice.num_states * width];
    let mut arc_cost = vec![INF; width];
    let mut arc_count = vec![0.0f64; width];
    for s in 0..lattice.num_states {
        arc_cost.fill(INF);
        arc_count.fill(0.0);
        if s == lattice.initial_state {
            arc_cost[0] = 0;
            arc_count[0] = 1.0;
        }
        let mut relax = |i: usize, c: u32, k: f64| {
            if c < arc_cost[i] {
                arc_cost[i] = c;
                arc_count[i] = k;
            } else if c == arc_cost[i] {
                arc_count[i] += k;
            }
        };
        for &ai in &inc[s] {
            let a = &lattice.arcs[ai];
            let base = a.src * width;
            for i in 0..width {
                let c = cost[base + i];
                if c >= INF {
                    continue;
                }
                let k = count[base + i];
                if is_auxiliary(a.word) {
                    relax(i, c, k);
                } else {
                    relax(i, c + 1, k);
                    if i < n {
                        relax(i + 1, c + u32::from(a.word != reference[i]), k);
                    }
                }
            }
        }
        let base = s * width;
        for i in 0..width {
            let (mut c, mut k) = (arc_cost[i], arc_count[i]);
            if i > 0 && cost[base + i - 1] < INF {
                let dc = cost[base + i - 1] + 1;
                if dc < c {
                    c = dc;
                    k = count[base + i - 1];
                } else if dc == c {
                    k += count[base + i - 1];
                }
            }
            cost[base + i] = c;
            count[base + i] = k;
        }
    }
    OracleGrid { width, cost, count }
}

/// Minimum number of word errors over all complete paths.
pub fn oracle_errors(lattice: &Lattice, reference: &[WordId]) -> Result<usize, LatticeError> {
    check_sorted(lattice)?;
    let inc = lattice.in_arcs();
    let grid = oracle_grid(lattice, reference, &inc);
    let n = reference.len();
    let best = lattice
        .final_states
        .keys()
        .map(|&f| grid.cost[f * grid.width + n])
        .min()
        .unwrap_or(INF);
    if best >= INF {
        return Err(LatticeError::NoFinalState);
    }
    Ok(best as usize)
}

fn pick_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Number of minimal derivations of a fixed arc path against the reference.
fn derivations_of_path(lattice: &Lattice, path: &[usize], reference: &[WordId], target: u32) -> f64 {
    let n = reference.len();
    let mut cost = vec![INF; n + 1];
    let mut count = vec![0.0; n + 1];
    cost[0] = 0;
    count[0] = 1.0;
    for i in 1..=n {
        cost[i] = i as u32;
        count[i] = 1.0;
    }
    for &ai in path {
        let w = lattice.arcs[ai].word;
        if is_auxiliary(w) {
            continue;
        }
        let mut nc = vec![INF; n + 1];
        let mut nk = vec![0.0; n + 1];
        for i in 0..=n {
            let mut c = cost[i] + 1;
            let mut k = count[i];
            if i > 0 {
                let sc = cost[i - 1] + u32::from(w != reference[i - 1]);
                if sc < c {
                    c = sc;
                    k = count[i - 1];
                } else if sc == c {
                    k += count[i - 1];
                }
                let dc = nc[i - 1] + 1;
                if dc < c {
                    c = dc;
                    k = nk[i - 1];
                } else if dc == c {
                    k += nk[i - 1];
                }
            }
            nc[i] = c;
            nk[i] = k;
        }
        cost = nc;
        count = nk;
    }
    debug_assert_eq!(cost[n], target);
    count[n]
}

/// Finds an oracle path and labels the arcs on it. Among several oracle
/// paths, one is drawn uniformly at random.
pub fn oracle_path<R: Rng + ?Sized>(
    lattice: &Lattice,
    reference: &[WordId],
    rng: &mut R,
) -> Result<ArcTargets, LatticeError> {
    check_sorted(lattice)?;
    let inc = lattice.in_arcs();
    let grid = oracle_grid(lattice, reference, &inc);
    let n = reference.len();
    let w = grid.width;
    let finals: Vec<usize> = lattice.final_states.keys().copied().collect();
    let best = finals
        .iter()
        .map(|&f| grid.cost[f * w + n])
        .min()
        .unwrap_or(INF);
    if best >= INF {
        return Err(LatticeError::NoFinalState);
    }
    let final_weights: Vec<f64> = finals
        .iter()
        .map(|&f| {
            if grid.cost[f * w + n] == best {
                grid.count[f * w + n]
            } else {
                0.0
            }
        })
        .collect();

    const MAX_DRAWS: usize = 10_000;
    let mut path = Vec::new();
    for _ in 0..MAX_DRAWS {
        path.clear();
        let (mut s, mut i) = (finals[pick_weighted(rng, &final_weights)], n);
        while !(s == lattice.initial_state && i == 0) {
            let here = grid.cost[s * w + i];
            // (predecessor state, predecessor position, arc taken)
            let mut moves: Vec<(usize, usize, Option<usize>)> = Vec::new();
            let mut weights: Vec<f64> = Vec::new();
            if i > 0 && grid.cost[s * w + i - 1] + 1 == here {
                moves.push((s, i - 1, None));
                weights.push(grid.count[s * w + i - 1]);
            }
            for &ai in &inc[s] {
                let a = &lattice.arcs[ai];
                let x = a.src;
                if is_auxiliary(a.word) {
                    if grid.cost[x * w + i] == here {
                        moves.push((x, i, Some(ai)));
                        weights.push(grid.count[x * w + i]);
                    }
                    continue;
                }
                if i > 0 && grid.cost[x * w + i - 1] + u32::from(a.word != reference[i - 1]) == here
                {
                    moves.push((x, i - 1, Some(ai)));
                    weights.push(grid.count[x * w + i - 1]);
                }
                if grid.cost[x * w + i] + 1 == here {
                    moves.push((x, i, Some(ai)));
                    weights.push(grid.count[x * w + i]);
                }
            }
            let (ps, pi, arc) = moves[pick_weighted(rng, &weights)];
            if let Some(ai) = arc {
                path.push(ai);
            }
            s = ps;
            i = pi;
        }
        path.reverse();
        let m = derivations_of_path(lattice, &path, reference, best as u32);
        if m <= 1.0 || rng.random::<f64>() * m < 1.0 {
            break;
        }
    }
    Ok(ArcTargets::from_path(lattice, path, reference))
}

/// Corpus-level WER result.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusWer {
    /// Percent.
    pub wer: f64,
    pub stats: EditStats,
    pub per_utterance: BTreeMap<String, EditStats>,
}

/// Pools errors over utterances. Every hypothesis needs a reference; a
/// reference without a hypothesis counts as all deletions.
pub fn corpus_wer<T: PartialEq>(
    hyps: &BTreeMap<String, Vec<T>>,
    refs: &BTreeMap<String, Vec<T>>,
) -> Result<CorpusWer, AlignError> {
    if let Some(id) = hyps.keys().find(|k| !refs.contains_key(*k)) {
        return Err(AlignError::MissingReference(id.clone()));
    }
    let mut total = EditStats::default();
    let mut per_utterance = BTreeMap::new();
    for (id, r) in refs {
        let s = match hyps.get(id) {
            Some(h) => edit_distance(h, r),
            None => EditStats {
                deletions: r.len(),
                ref_len: r.len(),
                ..Default::default()
            },
        };
        total += s;
        per_utterance.insert(id.clone(), s);
    }
    Ok(CorpusWer {
        wer: total.wer(),
        stats: total,
        per_utterance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{augment, enumerate_paths, Arc};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Plain recursive Levenshtein, independent of the table-based version.
    fn brute_distance(h: &[&str], r: &[&str]) -> usize {
        match (h.split_first(), r.split_first()) {
            (None, _) => r.len(),
            (_, None) => h.len(),
            (Some((a, ht)), Some((b, rt))) => {
                let sub = brute_distance(ht, rt) + usize::from(a != b);
                let ins = brute_distance(ht, r) + 1;
                let del = brute_distance(h, rt) + 1;
                sub.min(ins).min(del)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        let s = edit_distance(&words("a b c"), &words("a b c"));
        assert_eq!(s.errors(), 0);
        let s = edit_distance(&words(""), &words("a b"));
        assert_eq!((s.substitutions, s.insertions, s.deletions), (0, 0, 2));
        let h = words("k i t t e n");
        let r = words("s i t t i n g");
        assert_eq!(brute_distance(&h, &r), 3);
        let s = edit_distance(&h, &r);
        assert_eq!(s.errors(), 3);
        assert_eq!(s.ref_len, 7);
        assert_eq!((s.substitutions, s.insertions, s.deletions), (2, 0, 1));
    }

    #[test]
    fn edit_distance_prefers_substitution() {
        let s = edit_distance(&words("x y"), &words("y z"));
        assert_eq!((s.substitutions, s.insertions, s.deletions), (2, 0, 0));
        let s = edit_distance(&words("a b"), &words(""));
        assert_eq!(s.insertions, 2);
    }

    // 0 -a/b-> 1 -cat-> 2
    fn two_path(a: WordId, b: WordId, cat: WordId) -> Lattice {
        let mut l = Lattice::new("u");
        l.add_arc(Arc::new(0, 1, a, 0.0, 0.0));
        l.add_arc(Arc::new(0, 1, b, 0.0, 0.0));
        l.add_arc(Arc::new(1, 2, cat, 0.0, 0.0));
        l.set_final(2, 0.0);
        l
    }

    #[test]
    fn oracle_exact_and_one_error() {
        let (a, b, cat, dog) = (4, 5, 6, 7);
        let l = two_path(a, b, cat);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = oracle_path(&l, &[a, cat], &mut rng).unwrap();
        assert_eq!(t.oracle_stats.errors(), 0);
        assert_eq!(t.labels, vec![1, 0, 1]);
        let t = oracle_path(&l, &[a, dog], &mut rng).unwrap();
        assert_eq!(t.oracle_stats.errors(), 1);
        assert_eq!(t.oracle_path, vec![0, 2]);
        let brute = enumerate_paths(&l, 10)
            .unwrap()
            .iter()
            .map(|p| edit_distance(&p.words, &[a, dog]).errors())
            .min()
            .unwrap();
        assert_eq!(brute, 1);
    }

    #[test]
    fn oracle_ties_are_uniform() {
        let (a, b, cat, x) = (4, 5, 6, 8);
        let l = two_path(a, b, cat);
        let mut first = 0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = oracle_path(&l, &[x, cat], &mut rng).unwrap();
            assert_eq!(t.oracle_stats.errors(), 1);
            if t.oracle_path[0] == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / 1000.0;
        assert!((freq - 0.5).abs() < 0.05, "freq {freq}");
    }

    #[test]
    fn oracle_uniform_over_paths_not_alignments() {
        // Path "x y" has two minimal alignments against "y z", path "q q"
        // has one; both cost 2.
        let (x, y, z, q) = (4, 5, 6, 7);
        let mut l = Lattice::new("u");
        l.add_arc(Arc::new(0, 1, x, 0.0, 0.0));
        l.add_arc(Arc::new(1, 3, y, 0.0, 0.0));
        l.add_arc(Arc::new(0, 2, q, 0.0, 0.0));
        l.add_arc(Arc::new(2, 3, q, 0.0, 0.0));
        l.set_final(3, 0.0);
        let mut first = 0;
        let draws = 4000;
        for seed in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = oracle_path(&l, &[y, z], &mut rng).unwrap();
            assert_eq!(t.oracle_stats.errors(), 2);
            if t.oracle_path[0] == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.04, "freq {freq}");
    }

    #[test]
    fn oracle_ignores_auxiliary_arcs() {
        let (a, b, cat, dog) = (4, 5, 6, 7);
        let l = two_path(a, b, cat);
        let aug = augment(&l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = oracle_path(&aug, &[b, dog], &mut rng).unwrap();
        assert_eq!(t.oracle_stats.errors(), 1);
        let labelled: Vec<WordId> = t.oracle_path.iter().map(|&i| aug.arcs[i].word).collect();
        assert_eq!(labelled, vec![crate::BOS, b, cat, crate::EOS]);
    }

    #[test]
    fn oracle_with_empty_reference() {
        let mut l = Lattice::new("u");
        l.add_arc(Arc::new(0, 1, 4, 0.0, 0.0));
        l.add_arc(Arc::new(1, 2, 4, 0.0, 0.0));
        l.add_arc(Arc::new(0, 2, 5, 0.0, 0.0));
        l.set_final(2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = oracle_path(&l, &[], &mut rng).unwrap();
        assert_eq!(t.oracle_path, vec![2]);
        assert_eq!(t.oracle_stats.insertions, 1);
    }

    #[test]
    fn oracle_rejects_unsorted() {
        let mut l = Lattice::new("u");
        l.add_arc(Arc::new(1, 0, 4, 0.0, 0.0));
        l.initial_state = 1;
        l.set_final(0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            oracle_path(&l, &[4], &mut rng),
            Err(LatticeError::MalformedLattice(_))
        ));
    }

    #[test]
    fn corpus_wer_examples() {
        let mut refs = BTreeMap::new();
        let mut hyps = BTreeMap::new();
        refs.insert("u1".to_string(), words("a b c d e f g h i j"));
        refs.insert("u2".to_string(), words("a b c d e f g h i j"));
        hyps.insert("u1".to_string(), words("a b c d e f g h i j"));
        hyps.insert("u2".to_string(), words("a b c d e f g h i k"));
        let r = corpus_wer(&hyps, &refs).unwrap();
        assert!((r.wer - 5.0).abs() < 1e-12);

        hyps.insert("u2".to_string(), words("a b c d e f g h i j"));
        assert_eq!(corpus_wer(&hyps, &refs).unwrap().wer, 0.0);

        hyps.insert("u3".to_string(), words("x"));
        assert_eq!(
            corpus_wer(&hyps, &refs).unwrap_err(),
            AlignError::MissingReference("u3".into())
        );
    }

    #[test]
    fn corpus_wer_sums_utterances() {
        let mut refs = BTreeMap::new();
        let mut hyps = BTreeMap::new();
        let cases = [
            ("u1", "the cat sat", "the bat sat down"),
            ("u2", "a b c d", "a c d"),
            ("u3", "one two", "won two too"),
        ];
        let mut expected = EditStats::default();
        for (id, r, h) in cases {
            refs.insert(id.to_string(), words(r));
            hyps.insert(id.to_string(), words(h));
            expected += edit_distance(&words(h), &words(r));
        }
        refs.insert("u4".to_string(), words("missing hyp"));
        expected += EditStats {
            deletions: 2,
            ref_len: 2,
            ..Default::default()
        };
        let r = corpus_wer(&hyps, &refs).unwrap();
        assert_eq!(r.stats, expected);
        assert!((r.wer - 100.0 * expected.errors() as f64 / expected.ref_len as f64).abs() < 1e-12);
    }
}
