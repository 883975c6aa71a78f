//! Invariant suite behind the `selftest` command. Each check compares a
//! module against an independent brute-force or numerical oracle.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltlm_autodiff::{grad_check, Checkpoint, GradCheckConfig, ParamStore, Tape, Tensor};
use ltlm_core::align::oracle_errors;
use ltlm_core::io::{
    lattice_archive_to_string, parse_lattice_str, read_alignments, read_symbol_table, read_transcripts,
    write_symbol_table, LatticeArchive,
};
use ltlm_core::random::{random_lattice, random_small_lattice, RandomLatticeSpec};
use ltlm_core::symbols::is_auxiliary;
use ltlm_core::{augment, edit_distance, enumerate_paths, topo_sort, Arc, Lattice, NgramModel, ScoreWeights, SymbolTable, WordId};
use ltlm_latgen::{synthesize_posteriors, FakeAcousticModel};
use ltlm_model::blocks::{init_block, self_attention, segments_from_lengths};
use ltlm_model::{grad_check_model, ArcBatch, BlockDims, LtLm, LtLmConfig};
use ltlm_rescore::{best_path, nbest_extract};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

pub fn format_results(results: &[CheckResult]) -> String {
    results
        .iter()
        .map(|r| format!("{} {}: {}\n", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail))
        .collect()
}

/// Fixture counts; `quick` shrinks them for smoke runs.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub lattices: usize,
    pub permutation_lattices: usize,
    pub fam_frames: usize,
    pub round_trips: usize,
    pub fuzz_lines: usize,
}

impl Scale {
    pub fn full() -> Self {
        Self {
            lattices: 200,
            permutation_lattices: 50,
            fam_frames: 50_000,
            round_trips: 10_000,
            fuzz_lines: 1_000_000,
        }
    }

    pub fn quick() -> Self {
        Self {
            lattices: 40,
            permutation_lattices: 10,
            fam_frames: 50_000,
            round_trips: 500,
            fuzz_lines: 20_000,
        }
    }
}

pub fn run_all(quick: bool) -> Vec<CheckResult> {
    let s = if quick { Scale::quick() } else { Scale::full() };
    let mut out = vec![oracle_correctness(s.lattices), search_correctness(s.lattices)];
    out.extend(gradient_fidelity());
    out.push(permutation_equivariance(s.permutation_lattices));
    out.push(fam_validity(s.fam_frames));
    out.push(round_trips(s.round_trips));
    out.push(parser_fuzzing(s.fuzz_lines));
    out
}

fn small_table() -> SymbolTable {
    let mut t = SymbolTable::new();
    for w in ["a", "b", "c", "d", "e", "f", "g", "h"] {
        t.add(w);
    }
    t
}

fn lattice_spec(rng: &mut ChaCha8Rng) -> RandomLatticeSpec {
    RandomLatticeSpec {
        states: rng.random_range(2..10),
        extra_arcs: rng.random_range(0..10),
        words: (4..10).collect(),
        shuffle_states: rng.random::<bool>(),
        ..Default::default()
    }
}

fn content(words: &[WordId]) -> Vec<WordId> {
    words.iter().copied().filter(|&w| !is_auxiliary(w)).collect()
}

/// Random lattices with at most 64 paths, half of them augmented.
pub fn fixture_lattices(seed: u64, n: usize) -> Vec<Lattice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spec = lattice_spec(&mut rng);
            let lat = random_small_lattice(&mut rng, &spec, 64, &format!("st{i}"));
            if i % 2 == 1 {
                augment(&lat).expect("small lattice augments")
            } else {
                lat
            }
        })
        .collect()
}

/// Oracle error count against the minimum over enumerated paths.
pub fn oracle_correctness(n: usize) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for lat in fixture_lattices(100, n) {
        let lat = if lat.is_topologically_sorted() { lat } else { topo_sort(&lat).expect("acyclic") };
        let len = rng.random_range(0..7);
        let reference: Vec<WordId> = (0..len).map(|_| rng.random_range(4..11)).collect();
        let brute = enumerate_paths(&lat, 64)
            .expect("at most 64 paths")
            .iter()
            .map(|p| edit_distance(&content(&p.words), &reference).errors())
            .min();
        if oracle_errors(&lat, &reference).ok() != brute {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    CheckResult::new(
        "oracle correctness",
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches over {n} lattices in {secs:.2}s (limit 10s)"),
    )
}

/// Viterbi and N-best output against a sort of all enumerated paths.
pub fn search_correctness(n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    let mut compared = 0;
    for lat in fixture_lattices(200, n) {
        let w = ScoreWeights::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), 0.0);
        let mut all: Vec<(Vec<WordId>, f64)> = enumerate_paths(&lat, 64)
            .expect("at most 64 paths")
            .into_iter()
            .map(|p| (content(&p.words), w.a * p.ac_cost + w.l1 * p.lm_cost))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
        match best_path(&lat, &w, None) {
            Ok(b) if b.words == all[0].0 && close(b.cost, all[0].1) => {}
            _ => mismatches += 1,
        }
        let mut seen = HashSet::new();
        let distinct: Vec<&(Vec<WordId>, f64)> = all.iter().filter(|(ws, _)| seen.insert(ws.clone())).collect();
        for k in [1, 5, 50] {
            compared += 1;
            let want = &distinct[..k.min(distinct.len())];
            let ok = nbest_extract(&lat, k, &w).is_ok_and(|got| {
                got.len() == want.len() && got.iter().zip(want).all(|(g, (ws, c))| &g.words == ws && close(g.cost, *c))
            });
            if !ok {
                mismatches += 1;
            }
        }
    }
    CheckResult::new(
        "best-path and N-best correctness",
        mismatches == 0,
        format!("{mismatches} mismatches over {n} lattices ({compared} N-best lists)"),
    )
}

pub fn eight_arc_lattice() -> Lattice {
    let mut lat = Lattice::new("g");
    for (s, d, w) in [(0, 1, 4), (0, 1, 5), (1, 2, 6), (1, 3, 7), (2, 3, 8), (0, 2, 9)] {
        lat.add_arc(Arc::new(s, d, w, 0.5, 0.5));
    }
    lat.set_final(3, 0.0);
    augment(&lat).expect("small lattice augments")
}

fn tiny_config(seed: u64) -> LtLmConfig {
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

/// Finite differences on the full tiny LT-LM and on one attention block.
pub fn gradient_fidelity() -> Vec<CheckResult> {
    let config = tiny_config(21);
    let full = LtLm::new(config).and_then(|model| {
        let lat = eight_arc_lattice();
        let targets = [1u8, 0, 1, 0, 1, 0, 1, 0];
        let batch = ArcBatch::from_lattices(&[&lat], Some(&[&targets[..]]));
        grad_check_model(&config, model.params(), &batch, GradCheckConfig::default())
    });
    let full = match full {
        Ok(r) => CheckResult::new(
            "gradient fidelity (full model)",
            r.max_rel_error < 1e-4,
            format!("max relative error {:.3e} over {} coordinates (limit 1e-4)", r.max_rel_error, r.checked),
        ),
        Err(e) => CheckResult::new("gradient fidelity (full model)", false, e.to_string()),
    };
    let attn = match attention_grad_check() {
        Ok((err, checked)) => CheckResult::new(
            "gradient fidelity (attention block)",
            err < 1e-6,
            format!("max relative error {err:.3e} over {checked} coordinates (limit 1e-6)"),
        ),
        Err(e) => CheckResult::new("gradient fidelity (attention block)", false, e.to_string()),
    };
    vec![full, attn]
}

fn attention_grad_check() -> Result<(f64, usize), ltlm_autodiff::AutodiffError> {
    let dims = BlockDims {
        d_model: 8,
        heads: 2,
        ff_dim: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let rows = 7;
    let x: Vec<f64> = (0..rows * dims.d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
    store.add("x", Tensor::new(vec![rows, dims.d_model], x)?)?;
    init_block(&mut store, "blk", dims, &mut rng)?;
    // Zero biases would hide their gradients' scale; perturb every parameter.
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let probe: Vec<f64> = (0..rows * dims.d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Two segments so cross-segment masking is exercised.
    let segments = segments_from_lengths(&[4, 3]);
    let report = grad_check(&store, GradCheckConfig::default(), |ps| {
        let tape = Tape::new();
        let x = tape.param(ps, ps.id("x").expect("x exists"))?;
        let y = self_attention(&tape, ps, "blk", x, &segments, dims, false)?;
        let w = tape.leaf(Tensor::new(vec![rows, dims.d_model], probe.clone())?)?;
        let loss = tape.sum(tape.mul(y, w)?)?;
        Ok((tape.value(loss)?.item(), tape.backward(loss)?.param_grads(ps)))
    })?;
    Ok((report.max_rel_error, report.checked))
}

/// Eval-mode probabilities follow their arcs under arc-order shuffles.
pub fn permutation_equivariance(n: usize) -> CheckResult {
    let model = match LtLm::new(LtLmConfig {
        max_positions: 256,
        dropout: 0.1,
        ..tiny_config(7)
    }) {
        Ok(m) => m,
        Err(e) => return CheckResult::new("permutation equivariance", false, e.to_string()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut failed = None;
    for (i, lat) in fixture_lattices(300, n).into_iter().enumerate() {
        let lat = if lat.is_augmented() { lat } else { augment(&lat).expect("augments") };
        let lat = ltlm_model::prepare_lattice(&lat).expect("sortable");
        let mut perm: Vec<usize> = (0..lat.arcs.len()).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = lat.clone();
        shuffled.arcs = perm.iter().map(|&j| lat.arcs[j]).collect();
        match (
            model.forward(&ArcBatch::from_lattices(&[&lat], None)),
            model.forward(&ArcBatch::from_lattices(&[&shuffled], None)),
        ) {
            (Ok(p), Ok(q)) => {
                for (j, &orig) in perm.iter().enumerate() {
                    worst = worst.max((q[j] - p[orig]).abs());
                }
            }
            (Err(e), _) | (_, Err(e)) => failed = Some(format!("lattice {i}: {e}")),
        }
    }
    match failed {
        Some(e) => CheckResult::new("permutation equivariance", false, e),
        None => CheckResult::new(
            "permutation equivariance",
            worst < 1e-9,
            format!("max deviation {worst:.3e} over {n} lattices (limit 1e-9)"),
        ),
    }
}

/// Re-estimates a known confusion matrix from synthesized posteriors.
pub fn fam_validity(frames: usize) -> CheckResult {
    let a = 24;
    let truth: Vec<Vec<f64>> = (0..a)
        .map(|i| {
            let mut r = vec![0.0; a];
            r[i] = 0.7;
            r[i ^ 1] = 0.2;
            r[(i + 2) % a] = 0.1;
            r
        })
        .collect();
    let fam = FakeAcousticModel::from_rows(truth.clone()).expect("valid rows");
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let per_utt = 1000;
    let mut alignments = Vec::new();
    let mut posteriors = Vec::new();
    for u in 0..frames.div_ceil(per_utt) {
        let n = per_utt.min(frames - u * per_utt);
        let ali: Vec<u32> = (0..n).map(|_| rng.random_range(0..a as u32)).collect();
        match synthesize_posteriors(&ali, &fam, &mut rng, Some(20.0)) {
            Ok(p) => posteriors.push(p),
            Err(e) => return CheckResult::new("FAM validity", false, e.to_string()),
        }
        alignments.push((format!("u{u}"), ali));
    }
    let est = match FakeAcousticModel::estimate(&alignments, &posteriors, a) {
        Ok(e) => e,
        Err(e) => return CheckResult::new("FAM validity", false, e.to_string()),
    };
    let sum_dev = est
        .rows()
        .iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let l1 = est
        .rows()
        .iter()
        .zip(&truth)
        .map(|(g, w)| g.iter().zip(w).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    CheckResult::new(
        "FAM validity",
        sum_dev <= 1e-9 && l1 < 0.02,
        format!("max |row sum - 1| {sum_dev:.2e} (limit 1e-9); max row L1 {l1:.4} at {frames} frames (limit 0.02)"),
    )
}

fn random_double(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v = match rng.random_range(0..4) {
            0 => f64::from_bits(rng.random()),
            1 => rng.random::<f64>() * 100.0,
            2 => -rng.random::<f64>() * 1e-300,
            _ => (rng.random::<f64>() * 1000.0).round() / 10.0,
        };
        if v.is_finite() {
            return v;
        }
    }
}

fn lattice_bits(l: &Lattice) -> (String, usize, usize, Vec<(usize, usize, WordId, u64, u64)>, BTreeMap<usize, u64>) {
    (
        l.utterance_id.clone(),
        l.num_states,
        l.initial_state,
        l.arcs
            .iter()
            .map(|a| (a.src, a.dst, a.word, a.lm_cost.to_bits(), a.ac_cost.to_bits()))
            .collect(),
        l.final_states.iter().map(|(&s, c)| (s, c.to_bits())).collect(),
    )
}

fn random_token(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[char] = &['a', 'b', 'z', 'Q', '0', '9', '_', '-', '\'', '.', '<', '>', 'é', 'ß', '日'];
    (0..rng.random_range(1..8)).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect()
}

fn lattice_round_trip(rng: &mut ChaCha8Rng, i: usize, table: &SymbolTable) -> Result<(), String> {
    let spec = RandomLatticeSpec {
        states: rng.random_range(2..12),
        extra_arcs: rng.random_range(0..8),
        words: (4..12).collect(),
        ..Default::default()
    };
    let mut lat = random_lattice(rng, &spec, &format!("utt-{i}"));
    for a in &mut lat.arcs {
        a.lm_cost = random_double(rng);
        a.ac_cost = random_double(rng);
    }
    for c in lat.final_states.values_mut() {
        *c = random_double(rng);
    }
    let archive = LatticeArchive::new(vec![lat]);
    let text = lattice_archive_to_string(&archive, table).map_err(|e| e.to_string())?;
    let back = parse_lattice_str(&text, table, true).map_err(|e| e.to_string())?;
    let again = lattice_archive_to_string(&back, table).map_err(|e| e.to_string())?;
    if back.lattices.len() != 1 || lattice_bits(&back.lattices[0]) != lattice_bits(&archive.lattices[0]) || again != text {
        return Err(format!("lattice {i} differs after a round trip"));
    }
    Ok(())
}

fn symbol_round_trip(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let mut pairs: Vec<(String, WordId)> = ltlm_core::symbols::RESERVED.iter().map(|&(t, id)| (t.to_string(), id)).collect();
    let mut seen: HashSet<String> = pairs.iter().map(|p| p.0.clone()).collect();
    let mut next = 4;
    for _ in 0..rng.random_range(0..20) {
        let tok = random_token(rng);
        if seen.insert(tok.clone()) {
            next += rng.random_range(1..4);
            pairs.push((tok, next));
        }
    }
    pairs.shuffle(rng);
    let table = SymbolTable::from_pairs(pairs).map_err(|e| format!("table {i}: {e}"))?;
    let mut buf = Vec::new();
    write_symbol_table(&table, &mut buf).map_err(|e| e.to_string())?;
    let back = read_symbol_table(buf.as_slice()).map_err(|e| format!("table {i}: {e}"))?;
    let mut again = Vec::new();
    write_symbol_table(&back, &mut again).map_err(|e| e.to_string())?;
    if back != table || again != buf {
        return Err(format!("symbol table {i} differs after a round trip"));
    }
    Ok(())
}

fn arpa_round_trip(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let mut vocab = SymbolTable::new();
    let v = rng.random_range(2..8);
    for k in 0..v {
        vocab.add(&format!("w{k}"));
    }
    let corpus: Vec<Vec<WordId>> = (0..rng.random_range(1..6))
        .map(|_| (0..rng.random_range(0..6)).map(|_| 4 + rng.random_range(0..v as u32)).collect())
        .collect();
    let order = rng.random_range(1..4);
    let model = NgramModel::train(&corpus, order, &vocab).map_err(|e| format!("arpa {i}: {e}"))?;
    let mut buf = Vec::new();
    model.write_arpa(&mut buf).map_err(|e| e.to_string())?;
    let back = NgramModel::read_arpa(buf.as_slice(), &vocab).map_err(|e| format!("arpa {i}: {e}"))?;
    let mut again = Vec::new();
    back.write_arpa(&mut again).map_err(|e| e.to_string())?;
    if back != model || again != buf {
        return Err(format!("ARPA model {i} differs after a round trip"));
    }
    Ok(())
}

fn checkpoint_round_trip(rng: &mut ChaCha8Rng, i: usize) -> Result<(), String> {
    let mut tensors = ParamStore::new();
    for k in 0..rng.random_range(1..5) {
        let shape: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect();
        let n = shape.iter().product();
        let data = (0..n).map(|_| random_double(rng)).collect();
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        tensors.add(&format!("p{k}.{}", random_token(rng)), t).map_err(|e| e.to_string())?;
    }
    let ckpt = Checkpoint {
        meta: serde_json::json!({ "fixture": i, "value": random_double(rng) }),
        tensors,
    };
    let mut buf = Vec::new();
    ckpt.write(&mut buf).map_err(|e| e.to_string())?;
    let back = Checkpoint::read(buf.as_slice()).map_err(|e| format!("checkpoint {i}: {e}"))?;
    let bits = |c: &Checkpoint| -> Vec<(String, Vec<usize>, Vec<u64>)> {
        c.tensors
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let mut again = Vec::new();
    back.write(&mut again).map_err(|e| e.to_string())?;
    if bits(&back) != bits(&ckpt) || back.meta != ckpt.meta || again != buf {
        return Err(format!("checkpoint {i} differs after a round trip"));
    }
    Ok(())
}

/// Lattice, symbol table, ARPA and checkpoint round trips.
pub fn round_trips(n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let table = small_table();
    let mut failures = Vec::new();
    for i in 0..n {
        for r in [
            lattice_round_trip(&mut rng, i, &table),
            symbol_round_trip(&mut rng, i),
            arpa_round_trip(&mut rng, i),
            checkpoint_round_trip(&mut rng, i),
        ] {
            if let Err(e) = r {
                failures.push(e);
            }
        }
    }
    CheckResult::new(
        "bit-exact round trips",
        failures.is_empty(),
        match failures.first() {
            None => format!("{n} fixtures each of lattices, symbol tables, ARPA models and checkpoints"),
            Some(e) => format!("{} failures, first: {e}", failures.len()),
        },
    )
}

fn mutate(rng: &mut ChaCha8Rng, line: &str) -> Vec<u8> {
    const ALPHABET: &[u8] = b"0123456789 .-+eEinfNaN\t\nabz<>/\\\xff\xc3";
    let mut bytes = line.as_bytes().to_vec();
    for _ in 0..rng.random_range(1..4) {
        let b = ALPHABET[rng.random_range(0..ALPHABET.len())];
        if bytes.is_empty() {
            bytes.push(b);
            continue;
        }
        let pos = rng.random_range(0..bytes.len());
        match rng.random_range(0..4) {
            0 => bytes[pos] = b,
            1 => bytes.insert(pos, b),
            2 => {
                bytes.remove(pos);
            }
            _ => bytes.truncate(pos),
        }
    }
    bytes
}

/// Mutates single lines of every text format and parses them. A panic is a
/// failure; errors are expected.
pub fn parser_fuzzing(lines: usize) -> CheckResult {
    let table = small_table();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let lattices = fixture_lattices(77, 8);
    let lattice_text = lattice_archive_to_string(&LatticeArchive::new(lattices), &table).expect("serializes");
    let lattice_lines: Vec<&str> = lattice_text.lines().collect();
    let mut sym_text = Vec::new();
    write_symbol_table(&table, &mut sym_text).expect("serializes");
    let sym_text = String::from_utf8(sym_text).expect("utf-8");
    let sym_lines: Vec<&str> = sym_text.lines().collect();
    let lm = NgramModel::train(&[vec![4, 5, 6], vec![5, 6, 7, 4]], 3, &table).expect("trains");
    let mut arpa = Vec::new();
    lm.write_arpa(&mut arpa).expect("serializes");
    let arpa_text = String::from_utf8(arpa).expect("utf-8");
    let arpa_lines: Vec<&str> = arpa_text.lines().collect();
    let fam = FakeAcousticModel::leaky(4, 0.2, |i| i ^ 1).expect("valid");
    let mut fam_buf = Vec::new();
    fam.write(&mut fam_buf).expect("serializes");
    let fam_text = String::from_utf8(fam_buf).expect("utf-8");
    let fam_lines: Vec<&str> = fam_text.lines().collect();

    let mut panics = 0usize;
    let mut accepted = 0usize;
    let replace = |lines: &[&str], k: usize, new: &[u8]| -> Vec<u8> {
        let mut out = Vec::new();
        for (j, l) in lines.iter().enumerate() {
            if j == k {
                out.extend_from_slice(new);
            } else {
                out.extend_from_slice(l.as_bytes());
            }
            out.push(b'\n');
        }
        out
    };
    for i in 0..lines {
        let kind = i % 6;
        let result = catch_unwind(AssertUnwindSafe(|| match kind {
            0 | 1 => {
                // One record's worth of context keeps each parse cheap.
                let k = rng.random_range(0..lattice_lines.len());
                let lo = k.saturating_sub(3);
                let hi = (k + 4).min(lattice_lines.len());
                let window = &lattice_lines[lo..hi];
                let text = replace(window, k - lo, &mutate(&mut rng, lattice_lines[k]));
                let window_text = if lo > 0 && !window[0].contains(' ') {
                    text
                } else {
                    let mut t = b"fuzz\n".to_vec();
                    t.extend_from_slice(&text);
                    t
                };
                ltlm_core::io::parse_lattice_text(window_text.as_slice(), &table, kind == 0).is_ok()
            }
            2 => {
                let k = rng.random_range(0..sym_lines.len());
                let text = replace(&sym_lines, k, &mutate(&mut rng, sym_lines[k]));
                read_symbol_table(text.as_slice()).is_ok()
            }
            3 => {
                let k = rng.random_range(0..arpa_lines.len());
                let text = replace(&arpa_lines, k, &mutate(&mut rng, arpa_lines[k]));
                NgramModel::read_arpa(text.as_slice(), &table).is_ok()
            }
            4 => {
                let k = rng.random_range(0..fam_lines.len());
                let text = replace(&fam_lines, k, &mutate(&mut rng, fam_lines[k]));
                FakeAcousticModel::read(text.as_slice()).is_ok()
            }
            _ => {
                let line = mutate(&mut rng, "utt7\t4 5 6 12 0");
                read_transcripts(line.as_slice()).is_ok() | read_alignments(line.as_slice()).is_ok()
            }
        }));
        match result {
            Ok(true) => accepted += 1,
            Ok(false) => {}
            Err(_) => panics += 1,
        }
    }
    CheckResult::new(
        "parser fuzzing",
        panics == 0,
        format!("{lines} mutated lines, {panics} panics, {accepted} still parsed"),
    )
}
