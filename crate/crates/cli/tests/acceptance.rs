//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltlm_cli::cli::{read_archive, read_words};
use ltlm_cli::config::ExperimentConfig;
use ltlm_cli::pipeline::{list_outputs, load_world, train_lm, TIMING};
use ltlm_cli::selftest::{self, CheckResult};
use ltlm_cli::{run_pipeline, PipelineSummary};
use ltlm_core::random::{random_lattice, RandomLatticeSpec};
use ltlm_core::seed::derive_seed;
use ltlm_core::symbols::is_auxiliary;
use ltlm_core::{Lattice, ScoreWeights, WordId};
use ltlm_latgen::{generate_corpus, FakeAcousticModel, GenerationModels};
use ltlm_model::{LtLm, LtLmConfig};
use ltlm_rescore::single_shot_rescore;

const RUNTIME_LIMIT_SECS: f64 = 15.0 * 60.0;
const NBEST: usize = 50;
const MIN_CALL_RATIO: f64 = 10.0;
const SYNTHETIC_LATTICES: usize = 2703;
const SEEDS: u64 = 10;
const SEED_PASS_FRACTION: f64 = 0.95;

fn fixture_config(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy.toml");
    let set = format!("paths.out_dir={:?}", out.display().to_string());
    ExperimentConfig::load(&path, &[set]).expect("fixture config loads")
}

fn all_pass(name: &str, checks: Vec<CheckResult>) -> CheckResult {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    CheckResult { name: name.into(), pass, detail }
}

/// Toy-world lattices: identity FAM must contain the reference, and the
/// leaky FAM must leave room for rescoring on nearly every seed.
fn generation_fidelity(cfg: &ExperimentConfig) -> CheckResult {
    let world = load_world(cfg).expect("world loads");
    let lm = train_lm(&world, cfg.generation.ngram_order).expect("lm trains");
    let identity = FakeAcousticModel::identity(world.fam_true.num_classes());
    let models = GenerationModels {
        lexicon: &world.lexicon,
        lm: &lm,
        durations: &world.durations_true,
        fam: &identity,
        table: Some(&world.table),
    };
    let mut gen = cfg.eval_generation_config(derive_seed(cfg.seed, "accept:identity"));
    gen.kappa = None;
    let clean = generate_corpus(&world.eval_texts, &models, &gen);
    let clean_ok = clean.failures.is_empty() && clean.stats.oracle_wer == 0.0 && gen.decoder.lattice_beam >= 8.0;

    let leaky = GenerationModels {
        fam: &world.fam_true,
        ..models
    };
    let mut better = 0;
    let mut rows = Vec::new();
    for s in 0..SEEDS {
        let c = generate_corpus(&world.eval_texts, &leaky, &cfg.eval_generation_config(derive_seed(s, "accept:leaky")));
        better += usize::from(c.stats.oracle_wer < c.stats.first_pass_wer);
        rows.push(format!("{:.2}<{:.2}", c.stats.oracle_wer, c.stats.first_pass_wer));
    }
    let frac = better as f64 / SEEDS as f64;
    CheckResult {
        name: "generation fidelity".into(),
        pass: clean_ok && frac >= SEED_PASS_FRACTION,
        detail: format!(
            "identity FAM oracle WER {:.2}% over {} lattices; leaky oracle < first pass on {better}/{SEEDS} seeds [{}]",
            clean.stats.oracle_wer,
            clean.stats.generated,
            rows.join(" ")
        ),
    }
}

fn end_to_end(s: &PipelineSummary, secs: f64) -> CheckResult {
    let rescored = s.single_shot.wer;
    let pass = rescored < s.first_pass.wer && rescored >= s.oracle_wer && secs < RUNTIME_LIMIT_SECS;
    CheckResult {
        name: "end-to-end improvement".into(),
        pass,
        detail: format!(
            "oracle {:.2}% <= single-shot {:.2}% < first pass {:.2}% (50-best {:.2}%), {:.0}s",
            s.oracle_wer, rescored, s.first_pass.wer, s.nbest.wer, secs
        ),
    }
}

/// min(cap, number of distinct word sequences) from every state. A child
/// that hits the cap forces its parent to the cap, so truncation is exact.
fn distinct_sequences(lat: &Lattice, cap: usize) -> usize {
    let out = lat.out_arcs();
    let mut memo: HashMap<usize, BTreeSet<Vec<WordId>>> = HashMap::new();
    fn visit(
        s: usize,
        lat: &Lattice,
        out: &[Vec<usize>],
        cap: usize,
        memo: &mut HashMap<usize, BTreeSet<Vec<WordId>>>,
    ) -> BTreeSet<Vec<WordId>> {
        if let Some(v) = memo.get(&s) {
            return v.clone();
        }
        let mut set = BTreeSet::new();
        if lat.is_final(s) {
            set.insert(Vec::new());
        }
        for &ai in &out[s] {
            let a = &lat.arcs[ai];
            for tail in visit(a.dst, lat, out, cap, memo) {
                if set.len() >= cap {
                    break;
                }
                let mut seq = Vec::with_capacity(tail.len() + 1);
                if !is_auxiliary(a.word) {
                    seq.push(a.word);
                }
                seq.extend(tail);
                set.insert(seq);
            }
        }
        memo.insert(s, set.clone());
        set
    }
    visit(lat.initial_state, lat, &out, cap, &mut memo).len()
}

fn call_accounting(out: &Path, s: &PipelineSummary) -> CheckResult {
    let table = read_words(&out.join("words.txt")).expect("words");
    let archive = read_archive(&out.join("eval.lat.txt"), &table).expect("eval archive");
    let k = archive.lattices.len() as u64;
    let expected_nbest: u64 = archive.lattices.iter().map(|l| distinct_sequences(l, NBEST) as u64).sum();
    let ratio = s.nbest.model_calls as f64 / s.single_shot.model_calls.max(1) as f64;

    let tiny = LtLm::new(LtLmConfig {
        vocab_size: 16,
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_positions: 64,
        dropout: 0.0,
        seed: 7,
    })
    .expect("tiny model");
    let mut rng = ChaCha8Rng::seed_from_u64(2703);
    let synthetic: Vec<Lattice> = (0..SYNTHETIC_LATTICES)
        .map(|i| {
            let spec = RandomLatticeSpec {
                states: rng.random_range(2..20),
                extra_arcs: rng.random_range(0..20),
                words: (4..16).collect(),
                ..Default::default()
            };
            random_lattice(&mut rng, &spec, &format!("syn{i}"))
        })
        .collect();
    let weights = ScoreWeights { a: 1.0, l1: 1.0, l2: 0.8 };
    let syn = single_shot_rescore(&synthetic, &tiny, &weights, 1).expect("synthetic rescoring");

    let pass = s.single_shot.model_calls == k
        && s.single_shot.skipped == 0
        && s.nbest.model_calls == expected_nbest
        && ratio >= MIN_CALL_RATIO
        && syn.model_calls == SYNTHETIC_LATTICES as u64
        && syn.skipped.is_empty();
    CheckResult {
        name: "model call accounting".into(),
        pass,
        detail: format!(
            "single-shot {} calls for K={k}; 50-best {} calls (expected {expected_nbest}); ratio {ratio:.1}; synthetic {} calls for {SYNTHETIC_LATTICES} lattices",
            s.single_shot.model_calls, s.nbest.model_calls, syn.model_calls
        ),
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    list_outputs(dir)
        .expect("outputs listed")
        .into_iter()
        .filter(|f| f != TIMING)
        .map(|f| {
            let bytes = std::fs::read(dir.join(&f)).expect("output readable");
            (f, bytes)
        })
        .collect()
}

fn determinism(first: &BTreeMap<String, Vec<u8>>, cfg: &ExperimentConfig, args: &[String]) -> CheckResult {
    let out = cfg.paths.out_dir.clone();
    std::fs::remove_dir_all(&out).expect("clear output dir");
    let ok = run_pipeline(cfg, args).is_ok();
    let second = snapshot(&out);
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|f| first.get(*f) != second.get(*f))
        .collect();
    CheckResult {
        name: "determinism".into(),
        pass: ok && differing.is_empty() && !first.is_empty(),
        detail: format!("{} files compared, {} differ {:?}", first.len(), differing.len(), differing),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out: PathBuf = tmp.path().join("run");
    let cfg = fixture_config(&out);
    let args = vec!["ltlm".to_string(), "pipeline".to_string()];

    let mut results: Vec<CheckResult> = Vec::new();
    let mut report = |r: CheckResult| {
        println!("{} [{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, results.len() + 1, r.name, r.detail);
        results.push(r);
    };

    report(selftest::oracle_correctness(200));
    report(selftest::search_correctness(200));
    report(all_pass("gradient fidelity", selftest::gradient_fidelity()));
    report(selftest::permutation_equivariance(50));
    report(selftest::fam_validity(50_000));
    report(generation_fidelity(&cfg));

    let start = Instant::now();
    let summary = run_pipeline(&cfg, &args).map(|(s, _)| s);
    let secs = start.elapsed().as_secs_f64();
    match &summary {
        Ok(s) => {
            report(end_to_end(s, secs));
            report(call_accounting(&out, s));
        }
        Err(e) => {
            for name in ["end-to-end improvement", "model call accounting"] {
                report(CheckResult { name: name.into(), pass: false, detail: format!("pipeline failed: {e}") });
            }
        }
    }
    report(all_pass(
        "serialization",
        vec![selftest::round_trips(10_000), selftest::parser_fuzzing(1_000_000)],
    ));
    let first = snapshot(&out);
    report(determinism(&first, &cfg, &args));

    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
