use std::collections::{BTreeMap, BTreeSet};

use ltlm_latgen::duration::runs;
use ltlm_latgen::world::{ToyWorld, WorldConfig, NUM_CLASSES};
use ltlm_latgen::{
    build_alignment_graph, sample_fake_alignment, synthesize_posteriors, DurationModel, FakeAcousticModel, Histogram,
    Lexicon,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn small_world() -> ToyWorld {
    ToyWorld::build(WorldConfig {
        train_sentences: 10,
        eval_sentences: 10,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn duration_samples_match_histogram_means() {
    let (_, durations) = small_world().estimated_models().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for class in 0..NUM_CLASSES as u32 {
        let expected: f64 = durations
            .histogram(class)
            .probs()
            .iter()
            .map(|(&len, &p)| f64::from(len) * p)
            .sum();
        let n = 10_000;
        let mean = (0..n).map(|_| f64::from(durations.sample(class, &mut rng))).sum::<f64>() / f64::from(n);
        assert!((mean / expected - 1.0).abs() < 0.05, "class {class}: {mean} vs {expected}");
    }
}

#[test]
fn uniform_posteriors_give_uniform_rows() {
    let a = 5;
    let ali = vec![("u".to_string(), (0..40).map(|t| t % a as u32).collect::<Vec<_>>())];
    let post = vec![vec![vec![1.0 / a as f64; a]; 40]];
    let fam = FakeAcousticModel::estimate(&ali, &post, a).unwrap();
    for row in fam.rows() {
        for &v in row {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }
}

#[test]
fn confusion_matrix_is_recovered_from_50k_frames() {
    let a = NUM_CLASSES;
    // Known mixing matrix: class i keeps 0.8 and leaks 0.2 to i + 1.
    let truth: Vec<Vec<f64>> = (0..a)
        .map(|i| {
            let mut r = vec![0.0; a];
            r[i] = 0.8;
            r[(i + 1) % a] = 0.2;
            r
        })
        .collect();
    let fam_true = FakeAcousticModel::from_rows(truth.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut alignments = Vec::new();
    let mut posteriors = Vec::new();
    for u in 0..50 {
        let frames: Vec<u32> = (0..1000).map(|_| rng.random_range(0..a as u32)).collect();
        posteriors.push(synthesize_posteriors(&frames, &fam_true, &mut rng, Some(20.0)).unwrap());
        alignments.push((format!("u{u}"), frames));
    }
    let est = FakeAcousticModel::estimate(&alignments, &posteriors, a).unwrap();
    for (i, (got, want)) in est.rows().iter().zip(&truth).enumerate() {
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let d = l1(got, want);
        assert!(d < 0.02, "row {i}: L1 {d}");
    }
}

#[test]
fn pronunciation_product_rule() {
    let mut lex = Lexicon::new(8);
    lex.add(10, vec![0, 1]).unwrap();
    lex.add(11, vec![2]).unwrap();
    lex.add(11, vec![3]).unwrap();
    lex.add(12, vec![4]).unwrap();
    lex.add(12, vec![5, 6]).unwrap();
    lex.add(12, vec![7]).unwrap();
    let g = build_alignment_graph(&[10, 11, 12], &lex, None, true).unwrap();
    assert_eq!(g.num_paths(), 6);
    // Enumerate class paths through the graph arcs directly.
    let mut out: BTreeMap<usize, Vec<(usize, u32)>> = BTreeMap::new();
    for a in &g.arcs {
        out.entry(a.src).or_default().push((a.dst, a.class));
    }
    let mut paths = BTreeSet::new();
    let mut stack = vec![(0usize, Vec::new())];
    while let Some((s, p)) = stack.pop() {
        if s == g.final_state {
            paths.insert(p);
            continue;
        }
        for &(d, c) in out.get(&s).into_iter().flatten() {
            let mut q = p.clone();
            q.push(c);
            stack.push((d, q));
        }
    }
    assert_eq!(paths.len(), 6);
}

#[test]
fn pronunciation_choice_is_uniform() {
    let mut lex = Lexicon::new(6);
    lex.add(4, vec![0, 1]).unwrap();
    lex.add(4, vec![2, 3]).unwrap();
    lex.add(4, vec![4, 5]).unwrap();
    let g = build_alignment_graph(&[4], &lex, None, true).unwrap();
    let d = DurationModel::new(vec![None; 6], Histogram::point(1));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sample_fake_alignment(&g, &d, &mut rng, "u").choices[0]] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn deterministic_rows_repeat_and_identity_is_one_hot() {
    let fam = FakeAcousticModel::leaky(4, 0.3, |i| i ^ 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fali = [0, 0, 2, 1, 2, 3];
    let post = synthesize_posteriors(&fali, &fam, &mut rng, None).unwrap();
    assert_eq!(post[0], post[1]);
    assert_eq!(post[2], post[4]);
    let id = FakeAcousticModel::identity(4);
    let one_hot = synthesize_posteriors(&fali, &id, &mut rng, None).unwrap();
    for (row, &c) in one_hot.iter().zip(&fali) {
        let argmax = row.iter().position(|&v| v == 1.0).unwrap();
        assert_eq!(argmax as u32, c);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn high_concentration_redraws_center_on_the_row() {
    let fam = FakeAcousticModel::from_rows(vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.1, 0.8], vec![0.2, 0.2, 0.6]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let post = synthesize_posteriors(&vec![0; n], &fam, &mut rng, Some(1000.0)).unwrap();
    let mut mean = [0.0; 3];
    for row in &post {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    assert!(l1(&mean, &[0.6, 0.3, 0.1]) < 0.01, "{mean:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimated_rows_are_stochastic_and_diagonal_dominant(seed in any::<u64>(), a in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<u32> = (0..60).map(|_| rng.random_range(0..a as u32)).collect();
        let post: Vec<Vec<f64>> = frames
            .iter()
            .map(|_| {
                let raw: Vec<f64> = (0..a).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let fam = FakeAcousticModel::estimate(&[("u".into(), frames)], &[post], a).unwrap();
        for row in fam.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        prop_assert!(fam.diagonal_dominant());
    }

    #[test]
    fn fake_alignments_never_repeat_a_run(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lex = Lexicon::new(4);
        for w in 4..8 {
            for _ in 0..rng.random_range(1..3) {
                let pron: Vec<u32> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..4)).collect();
                lex.add(w, pron).unwrap();
            }
        }
        let words: Vec<u32> = (0..rng.random_range(1..6)).map(|_| rng.random_range(4..8)).collect();
        let g = build_alignment_graph(&words, &lex, None, true).unwrap();
        let d = DurationModel::new(
            vec![None; 4],
            Histogram::from_weights(BTreeMap::from([(1, 1.0), (2, 1.0), (3, 1.0)])).unwrap(),
        );
        let fa = sample_fake_alignment(&g, &d, &mut rng, "u");
        for pair in fa.runs.windows(2) {
            prop_assert_ne!(pair[0].0, pair[1].0);
        }
        prop_assert!(fa.runs.iter().all(|&(_, n)| n >= 1));
        prop_assert_eq!(runs(&fa.frames), fa.runs.clone());
        // Chosen pronunciations, merged, give the run classes.
        let mut merged: Vec<u32> = Vec::new();
        for (p, &c) in g.prons.iter().zip(&fa.choices) {
            for &x in &p[c] {
                if merged.last() != Some(&x) {
                    merged.push(x);
                }
            }
        }
        prop_assert_eq!(merged, fa.runs.iter().map(|r| r.0).collect::<Vec<_>>());
        prop_assert_eq!(fa.word_spans.last().unwrap().2, fa.frames.len());
    }
}
