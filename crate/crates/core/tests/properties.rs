use std::collections::BTreeMap;

use ltlm_core::align::oracle_errors;
use ltlm_core::io::{lattice_archive_to_string, parse_lattice_str, LatticeArchive};
use ltlm_core::lattice::{forward_backward_best, prune_mask};
use ltlm_core::random::{random_lattice, random_small_lattice, RandomLatticeSpec};
use ltlm_core::symbols::is_auxiliary;
use ltlm_core::{
    augment, edit_distance, enumerate_paths, oracle_path, prune, topo_sort, validate, Arc, Lattice,
    NgramModel, ScoreWeights, SymbolTable, WordId, EOS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table() -> SymbolTable {
    let mut t = SymbolTable::new();
    for w in ["a", "b", "c", "d", "e", "f"] {
        t.add(w);
    }
    t
}

fn spec(states: usize, extra: usize, shuffle: bool) -> RandomLatticeSpec {
    RandomLatticeSpec {
        states,
        extra_arcs: extra,
        shuffle_states: shuffle,
        ..Default::default()
    }
}

/// Multiset of (words, lm, ac) with costs as bit patterns so the comparison
/// is exact.
fn path_multiset(lat: &Lattice) -> Vec<(Vec<WordId>, u64, u64)> {
    let mut v: Vec<_> = enumerate_paths(lat, 1 << 16)
        .unwrap()
        .into_iter()
        .map(|p| (p.words, p.lm_cost.to_bits(), p.ac_cost.to_bits()))
        .collect();
    v.sort();
    v
}

fn content_words(words: &[WordId]) -> Vec<WordId> {
    words.iter().copied().filter(|&w| !is_auxiliary(w)).collect()
}

fn brute_oracle(lat: &Lattice, reference: &[WordId]) -> usize {
    enumerate_paths(lat, 1 << 16)
        .unwrap()
        .iter()
        .map(|p| edit_distance(&content_words(&p.words), reference).errors())
        .min()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn topo_sort_preserves_paths(seed in any::<u64>(), states in 2usize..10, extra in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_small_lattice(&mut rng, &spec(states, extra, true), 64, "u");
        let sorted = topo_sort(&lat).unwrap();
        prop_assert!(sorted.is_topologically_sorted());
        prop_assert_eq!(sorted.num_states, lat.num_states);
        prop_assert_eq!(path_multiset(&sorted), path_multiset(&lat));
    }

    #[test]
    fn augment_adds_expected_structure(seed in any::<u64>(), states in 2usize..10, extra in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_small_lattice(&mut rng, &spec(states, extra, false), 64, "u");
        let aug = augment(&lat).unwrap();
        prop_assert_eq!(aug.arcs.len(), lat.arcs.len() + 1 + lat.final_states.len());
        prop_assert_eq!(aug.num_states, lat.num_states + 2);
        prop_assert!(aug.is_topologically_sorted());
        let totals = |l: &Lattice| {
            let mut v: Vec<(Vec<WordId>, f64)> = enumerate_paths(l, 1 << 16)
                .unwrap()
                .into_iter()
                .map(|p| (content_words(&p.words), p.lm_cost + p.ac_cost))
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let (before, after) = (totals(&lat), totals(&aug));
        prop_assert_eq!(before.len(), after.len());
        for (x, y) in before.iter().zip(&after) {
            prop_assert_eq!(&x.0, &y.0);
            prop_assert!((x.1 - y.1).abs() <= 1e-9 * (1.0 + x.1.abs()));
        }
    }

    #[test]
    fn prune_is_monotone_in_beam(seed in any::<u64>(), b1 in 0.0f64..8.0, b2 in 0.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_lattice(&mut rng, &spec(12, 18, false), "u");
        let w = ScoreWeights::default();
        let (hi, lo) = if b1 >= b2 { (b1, b2) } else { (b2, b1) };
        let (keep_hi, _) = prune_mask(&lat, hi, &w).unwrap();
        let (keep_lo, _) = prune_mask(&lat, lo, &w).unwrap();
        for (h, l) in keep_hi.iter().zip(&keep_lo) {
            prop_assert!(*h || !*l);
        }
        let small = prune(&lat, lo, &w).unwrap();
        let large = prune(&lat, hi, &w).unwrap();
        prop_assert!(small.arcs.len() <= large.arcs.len());
    }

    #[test]
    fn trimmed_states_lie_on_complete_paths(seed in any::<u64>(), extra in 0usize..10, dangling in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lat = random_lattice(&mut rng, &spec(8, extra, true), "u");
        for _ in 0..dangling {
            let s = lat.add_state();
            let other = rng.random_range(0..s);
            if rng.random::<bool>() {
                lat.add_arc(Arc::new(other, s, 4, 0.0, 0.0));
            } else {
                lat.add_arc(Arc::new(s, other, 4, 0.0, 0.0));
            }
        }
        let trimmed = validate(&lat, true).unwrap().lattice;
        let (alpha, beta) = forward_backward_best(&trimmed, &ScoreWeights::default(), None).unwrap();
        prop_assert!(alpha.iter().all(|a| a.is_finite()));
        prop_assert!(beta.iter().all(|b| b.is_finite()));
        prop_assert_eq!(path_multiset(&trimmed).len(), path_multiset(&lat).len());
    }

    #[test]
    fn oracle_matches_brute_force(seed in any::<u64>(), states in 2usize..10, extra in 0usize..8, rlen in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_small_lattice(&mut rng, &spec(states, extra, false), 64, "u");
        let reference: Vec<WordId> = (0..rlen).map(|_| rng.random_range(4..10)).collect();
        let targets = oracle_path(&lat, &reference, &mut rng).unwrap();
        let best = brute_oracle(&lat, &reference);
        prop_assert_eq!(targets.oracle_stats.errors(), best);
        prop_assert_eq!(oracle_errors(&lat, &reference).unwrap(), best);
        let words = content_words(&lat.words_of(&targets.oracle_path));
        prop_assert_eq!(edit_distance(&words, &reference).errors(), best);
        let aug = augment(&lat).unwrap();
        prop_assert_eq!(oracle_errors(&aug, &reference).unwrap(), best);
    }

    #[test]
    fn oracle_errors_never_increase_with_more_arcs(seed in any::<u64>(), more in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_lattice(&mut rng, &spec(9, 6, false), "u");
        let reference: Vec<WordId> = (0..5).map(|_| rng.random_range(4..10)).collect();
        let mut bigger = lat.clone();
        for _ in 0..more {
            let src = rng.random_range(0..lat.num_states - 1);
            let dst = rng.random_range(src + 1..lat.num_states);
            bigger.add_arc(Arc::new(src, dst, rng.random_range(4..10), 1.0, 1.0));
        }
        prop_assert!(oracle_errors(&bigger, &reference).unwrap() <= oracle_errors(&lat, &reference).unwrap());
    }

    #[test]
    fn exact_reference_path_has_zero_errors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_small_lattice(&mut rng, &spec(7, 5, false), 64, "u");
        let paths = enumerate_paths(&lat, 64).unwrap();
        let pick = &paths[rng.random_range(0..paths.len())];
        let reference = content_words(&pick.words);
        let targets = oracle_path(&lat, &reference, &mut rng).unwrap();
        prop_assert_eq!(targets.oracle_stats.errors(), 0);
        prop_assert_eq!(content_words(&lat.words_of(&targets.oracle_path)), reference);
    }

    #[test]
    fn ngram_scores_are_finite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = table();
        let corpus: Vec<Vec<WordId>> = (0..5)
            .map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_range(4..10)).collect())
            .collect();
        let m = NgramModel::train(&corpus, 3, &t).unwrap();
        let s: Vec<WordId> = (0..rng.random_range(0..8)).map(|_| rng.random_range(3..10)).collect();
        prop_assert!(m.score_sentence(&s).is_finite());
        prop_assert!(m.score_sentence(&s) < 0.0);
    }
}

#[test]
fn adding_a_sentence_never_lowers_its_probability() {
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let corpus: Vec<Vec<WordId>> = (0..rng.random_range(1..6))
            .map(|_| (0..rng.random_range(1..5)).map(|_| rng.random_range(4..8)).collect())
            .collect();
        let s: Vec<WordId> = (0..rng.random_range(1..5)).map(|_| rng.random_range(4..10)).collect();
        for order in 1..=3 {
            let before = NgramModel::train(&corpus, order, &t).unwrap().score_sentence(&s);
            let mut more = corpus.clone();
            more.push(s.clone());
            let after = NgramModel::train(&more, order, &t).unwrap().score_sentence(&s);
            assert!(after >= before - 1e-12, "order {order}: {corpus:?} + {s:?}");
        }
    }
}

#[test]
fn ngram_round_trip_preserves_sentence_scores() {
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let corpus: Vec<Vec<WordId>> = (0..40)
        .map(|_| (0..rng.random_range(1..7)).map(|_| rng.random_range(4..10)).collect())
        .collect();
    let m = NgramModel::train(&corpus, 3, &t).unwrap();
    let mut buf = Vec::new();
    m.write_arpa(&mut buf).unwrap();
    let back = NgramModel::read_arpa(buf.as_slice(), &t).unwrap();
    assert_eq!(back, m);
    for _ in 0..100 {
        let s: Vec<WordId> = (0..rng.random_range(0..9)).map(|_| rng.random_range(3..10)).collect();
        assert!((m.score_sentence(&s) - back.score_sentence(&s)).abs() < 1e-9);
    }
    assert!(m.score_sentence(&[EOS]).is_finite());
}

fn random_finite(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v = match rng.random_range(0..3) {
            0 => f64::from_bits(rng.random()),
            1 => rng.random::<f64>() * 100.0,
            _ => (rng.random::<f64>() * 1000.0).round() / 10.0,
        };
        if v.is_finite() {
            return v;
        }
    }
}

#[test]
fn lattice_text_round_trip_is_bit_exact() {
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut archive = LatticeArchive::default();
    let mut doubles = 0;
    let mut n = 0;
    while doubles < 10_000 {
        let states = rng.random_range(2..9);
        let mut lat = random_lattice(&mut rng, &spec(states, 4, false), &format!("utt{n}"));
        for a in &mut lat.arcs {
            a.lm_cost = random_finite(&mut rng);
            a.ac_cost = random_finite(&mut rng);
            doubles += 2;
        }
        for c in lat.final_states.values_mut() {
            *c = random_finite(&mut rng);
            doubles += 1;
        }
        archive.lattices.push(lat);
        n += 1;
    }
    let text = lattice_archive_to_string(&archive, &t).unwrap();
    let back = parse_lattice_str(&text, &t, true).unwrap();
    assert_eq!(back.lattices.len(), archive.lattices.len());
    for (x, y) in archive.lattices.iter().zip(&back.lattices) {
        assert_eq!(x.utterance_id, y.utterance_id);
        assert_eq!(x.num_states, y.num_states);
        let bits = |l: &Lattice| -> (Vec<(usize, usize, WordId, u64, u64)>, BTreeMap<usize, u64>) {
            (
                l.arcs.iter().map(|a| (a.src, a.dst, a.word, a.lm_cost.to_bits(), a.ac_cost.to_bits())).collect(),
                l.final_states.iter().map(|(&s, c)| (s, c.to_bits())).collect(),
            )
        };
        assert_eq!(bits(x), bits(y));
    }
    assert_eq!(lattice_archive_to_string(&back, &t).unwrap(), text);
}

#[test]
fn mutated_archives_never_panic() {
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let archive = LatticeArchive::new(
        (0..4)
            .map(|i| random_lattice(&mut rng, &spec(5, 3, false), &format!("u{i}")))
            .collect(),
    );
    let base = lattice_archive_to_string(&archive, &t).unwrap().into_bytes();
    let alphabet = b"0123456789 .-+eEinfNaN\t\nabz\xff";
    let mut ok = 0usize;
    for _ in 0..20_000 {
        let mut bytes = base.clone();
        for _ in 0..rng.random_range(1..4) {
            let pos = rng.random_range(0..bytes.len());
            let b = alphabet[rng.random_range(0..alphabet.len())];
            match rng.random_range(0..3) {
                0 => bytes[pos] = b,
                1 => bytes.insert(pos, b),
                _ => {
                    bytes.remove(pos);
                }
            }
            if bytes.is_empty() {
                break;
            }
        }
        let strict = rng.random::<bool>();
        if ltlm_core::io::parse_lattice_text(bytes.as_slice(), &t, strict).is_ok() {
            ok += 1;
        }
    }
    assert!(ok > 0);
}
