use ltlm_autodiff::{Checkpoint, GradCheckConfig};
use ltlm_core::random::{random_small_lattice, RandomLatticeSpec};
use ltlm_core::{augment, Arc, Lattice, WordId};
use ltlm_model::train::Trainer;
use ltlm_model::{evaluate, grad_check_model, train_ltlm, ArcBatch, LtLm, LtLmConfig, TrainConfig, TrainingExample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> LtLmConfig {
    LtLmConfig {
        vocab_size: 12,
        d_model: 16,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        max_positions: 32,
        dropout: 0.0,
        seed,
    }
}

fn spec() -> RandomLatticeSpec {
    RandomLatticeSpec {
        states: 7,
        extra_arcs: 6,
        words: (4..12).collect(),
        ..Default::default()
    }
}

fn random_augmented(rng: &mut ChaCha8Rng, id: &str) -> Lattice {
    augment(&random_small_lattice(rng, &spec(), 64, id)).unwrap()
}

/// Reference: the words of a random complete path with one word replaced.
fn noisy_reference(rng: &mut ChaCha8Rng, lat: &Lattice) -> Vec<WordId> {
    let paths = ltlm_core::enumerate_paths(lat, 1000).unwrap();
    let mut words = paths[rng.random_range(0..paths.len())].words.clone();
    words.retain(|&w| w >= 4);
    if !words.is_empty() && rng.random::<f64>() < 0.5 {
        let i = rng.random_range(0..words.len());
        words[i] = rng.random_range(4..12);
    }
    words
}

fn dataset(seed: u64, n: usize) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lat = random_augmented(&mut rng, &format!("u{i}"));
            let reference = noisy_reference(&mut rng, &lat);
            TrainingExample::from_reference(&lat, &reference, &mut rng).unwrap()
        })
        .collect()
}

fn train_config(epochs: usize, batch_size: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        adam: ltlm_autodiff::AdamConfig {
            lr,
            warmup_steps: 0,
            ..Default::default()
        },
        seed: 11,
    }
}

fn permute_lattice(lat: &Lattice, perm: &[usize]) -> Lattice {
    let mut out = lat.clone();
    out.arcs = perm.iter().map(|&i| lat.arcs[i]).collect();
    out
}

#[test]
fn overfits_eight_lattices() {
    let data = dataset(1, 8);
    let model = LtLm::new(tiny(5)).unwrap();
    let (model, reports) = train_ltlm(model, train_config(400, 8, 3e-3), &data, &[], None, |_| {}).unwrap();
    assert_eq!(reports.len(), 400);
    let eval = evaluate(&model, &data, 8).unwrap();
    assert!(eval.loss < 0.05, "final BCE {}", eval.loss);
    assert_eq!(eval.separated_fraction, 1.0, "{eval:?}");
    assert!(reports.last().unwrap().train_loss < reports[0].train_loss);
}

#[test]
fn zero_learning_rate_is_an_identity() {
    let data = dataset(2, 6);
    let model = LtLm::new(tiny(1)).unwrap();
    let before = model.params().clone();
    let mut trainer = Trainer::new(model, train_config(1, 6, 0.0), &data).unwrap();
    let (first, _) = trainer.step().unwrap().unwrap();
    assert!(trainer.step().unwrap().is_none());
    let model = trainer.into_model();
    assert_eq!(model.params(), &before);
    let mut again = Trainer::new(model, train_config(3, 6, 0.0), &data).unwrap();
    while let Some((loss, _)) = again.step().unwrap() {
        assert_eq!(loss.to_bits(), first.to_bits());
    }
}

#[test]
fn resume_mid_epoch_reproduces_losses_bitwise() {
    let data = dataset(3, 8);
    let config = LtLmConfig { dropout: 0.1, ..tiny(2) };
    let tc = train_config(3, 3, 1e-3);
    let mut full = Trainer::new(LtLm::new(config).unwrap(), tc, &data).unwrap();
    let mut reference = Vec::new();
    while let Some((loss, _)) = full.step().unwrap() {
        reference.push(loss);
    }
    assert_eq!(reference.len(), 9);

    let mut part = Trainer::new(LtLm::new(config).unwrap(), tc, &data).unwrap();
    for _ in 0..4 {
        part.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    part.save(&path).unwrap();
    drop(part);
    let mut resumed = Trainer::resume(&Checkpoint::load(&path).unwrap(), &data).unwrap();
    let mut rest = Vec::new();
    while let Some((loss, _)) = resumed.step().unwrap() {
        rest.push(loss);
    }
    let a: Vec<u64> = reference[4..].iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = rest.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    assert_eq!(full.model().params(), resumed.model().params());
}

#[test]
fn per_epoch_checkpoints_are_written() {
    let data = dataset(4, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let (model, reports) = train_ltlm(
        LtLm::new(tiny(0)).unwrap(),
        train_config(2, 2, 1e-3),
        &data,
        &data,
        Some(dir.path()),
        |r| seen.push(r.epoch),
    )
    .unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert!(reports.iter().all(|r| r.heldout.as_ref().is_some_and(|h| h.auc.is_some())));
    let last = Trainer::resume(&Checkpoint::load(&dir.path().join("epoch-2.ckpt")).unwrap(), &data).unwrap();
    assert!(last.finished());
    assert_eq!(last.model().params(), model.params());
}

#[test]
fn permuting_arcs_permutes_probabilities() {
    let model = LtLm::new(LtLmConfig { max_positions: 256, ..tiny(7) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let lat = random_augmented(&mut rng, &format!("p{i}"));
        let mut perm: Vec<usize> = (0..lat.arcs.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = permute_lattice(&lat, &perm);
        let p = model.forward(&ArcBatch::from_lattices(&[&lat], None)).unwrap();
        let q = model.forward(&ArcBatch::from_lattices(&[&shuffled], None)).unwrap();
        for (j, &orig) in perm.iter().enumerate() {
            worst = worst.max((q[j] - p[orig]).abs());
        }
    }
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn batch_composition_does_not_change_outputs() {
    let model = LtLm::new(tiny(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let lats: Vec<Lattice> = (0..4).map(|i| random_augmented(&mut rng, &format!("b{i}"))).collect();
    let refs: Vec<&Lattice> = lats.iter().collect();
    let together = model.forward(&ArcBatch::from_lattices(&refs, None)).unwrap();
    let amax = lats.iter().map(|l| l.arcs.len()).max().unwrap();
    for (b, lat) in lats.iter().enumerate() {
        let alone = model.forward(&ArcBatch::from_lattices(&[lat], None)).unwrap();
        for a in 0..lat.arcs.len() {
            assert!((alone[a] - together[b * amax + a]).abs() < 1e-9);
        }
    }
    let dup = model.forward(&ArcBatch::from_lattices(&[&lats[0], &lats[0]], None)).unwrap();
    let n = lats[0].arcs.len();
    assert_eq!(dup[..n], dup[n..2 * n]);
}

#[test]
fn source_and_destination_tables_are_not_interchangeable() {
    let mut model = LtLm::new(tiny(4)).unwrap();
    let mut lat = Lattice::new("asym");
    lat.add_arc(Arc::new(0, 1, 4, 0.0, 0.0));
    lat.add_arc(Arc::new(1, 2, 5, 0.0, 0.0));
    lat.add_arc(Arc::new(0, 2, 6, 0.0, 0.0));
    lat.set_final(2, 0.0);
    let lat = augment(&lat).unwrap();
    let batch = ArcBatch::from_lattices(&[&lat], None);
    let before = model.forward(&batch).unwrap();
    let src = model.params().id("src_pos").unwrap();
    let dst = model.params().id("dst_pos").unwrap();
    let s = model.params().get(src).clone();
    let d = model.params().get(dst).clone();
    *model.params_mut().get_mut(src) = d;
    *model.params_mut().get_mut(dst) = s;
    let after = model.forward(&batch).unwrap();
    assert!(before.iter().zip(&after).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn each_forward_is_one_invocation() {
    let model = LtLm::new(tiny(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lats: Vec<Lattice> = (0..5).map(|i| random_augmented(&mut rng, &format!("c{i}"))).collect();
    let refs: Vec<&Lattice> = lats.iter().collect();
    model.forward(&ArcBatch::from_lattices(&refs, None)).unwrap();
    assert_eq!(model.invocations(), 1);
    for l in &lats {
        model.forward(&ArcBatch::from_lattices(&[l], None)).unwrap();
    }
    assert_eq!(model.invocations(), 6);
}

fn eight_arc_lattice() -> Lattice {
    let mut lat = Lattice::new("g");
    for (s, d, w) in [(0, 1, 4), (0, 1, 5), (1, 2, 6), (1, 3, 7), (2, 3, 8), (0, 2, 9)] {
        lat.add_arc(Arc::new(s, d, w, 0.5, 0.5));
    }
    lat.set_final(3, 0.0);
    let lat = augment(&lat).unwrap();
    assert_eq!(lat.arcs.len(), 8);
    lat
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let config = tiny(21);
    let model = LtLm::new(config).unwrap();
    let lat = eight_arc_lattice();
    let targets = [1u8, 0, 1, 0, 1, 0, 1, 0];
    let batch = ArcBatch::from_lattices(&[&lat], Some(&[&targets[..]]));
    let report = grad_check_model(&config, model.params(), &batch, GradCheckConfig::default()).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 2000);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let model = LtLm::new(tiny(6)).unwrap();
    let lat = eight_arc_lattice();
    let batch = ArcBatch::from_lattices(&[&lat], None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = LtLm::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.forward(&batch).unwrap(), model.forward(&batch).unwrap());
}
