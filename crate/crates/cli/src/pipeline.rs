//! The end-to-end experiment: world, lattices, models, rescoring, WER.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ltlm_core::io::{write_lattice_text, LatticeArchive};
use ltlm_core::seed::derive_seed;
use ltlm_core::{Lattice, NgramModel, SymbolTable, WordId};
use ltlm_latgen::generate::write_targets;
use ltlm_latgen::world::ToyWorld;
use ltlm_latgen::{generate_corpus, CorpusStats, GeneratedCorpus, GenerationModels};
use ltlm_model::{prepare_lattice, train_arlm, train_ltlm, ArLm, EpochReport, LtLm, TrainingExample};
use ltlm_rescore::{first_pass_report, nbest_rescore, single_shot_rescore, RescoreReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::world_io::{write_file, write_texts, WorldData};

pub const SUMMARY: &str = "summary.json";
/// Wall-clock timings; the only output that differs between reruns.
pub const TIMING: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub generated: usize,
    pub skipped: usize,
    pub retried: usize,
    pub avg_arcs: f64,
    pub avg_states: f64,
    pub arcs_per_word: f64,
    pub oracle_wer: f64,
    pub first_pass_wer: f64,
}

impl From<&CorpusStats> for CorpusSummary {
    fn from(s: &CorpusStats) -> Self {
        Self {
            generated: s.generated,
            skipped: s.skipped,
            retried: s.retried,
            avg_arcs: s.avg_arcs,
            avg_states: s.avg_states,
            arcs_per_word: s.arcs_per_word,
            oracle_wer: s.oracle_wer,
            first_pass_wer: s.first_pass_wer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub wer: f64,
    pub errors: usize,
    pub model_calls: u64,
    pub avg_call_length: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub config_hash: String,
    pub train_corpus: CorpusSummary,
    pub eval_corpus: CorpusSummary,
    /// Number of evaluation lattices.
    pub eval_lattices: usize,
    pub ref_words: usize,
    pub oracle_wer: f64,
    pub first_pass: MethodSummary,
    pub single_shot: MethodSummary,
    pub nbest: MethodSummary,
    pub ltlm_epochs: Vec<EpochReport>,
    pub arlm_losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total_secs: f64,
}

struct Clock {
    start: Instant,
    last: Instant,
    timing: Timing,
}

impl Clock {
    fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            timing: Timing::default(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let secs = (now - self.last).as_secs_f64();
        log::info!("{stage}: {secs:.1}s");
        self.timing.stages.push((stage.to_string(), secs));
        self.last = now;
    }

    fn finish(mut self) -> Timing {
        self.timing.total_secs = self.start.elapsed().as_secs_f64();
        self.timing
    }
}

/// Loads the configured world or builds it from the `[world]` section.
pub fn load_world(cfg: &ExperimentConfig) -> Result<WorldData> {
    match &cfg.paths.world_dir {
        Some(dir) => WorldData::load(dir),
        None => WorldData::from_world(&ToyWorld::build(cfg.world_config())?),
    }
}

pub fn train_lm(world: &WorldData, order: usize) -> Result<NgramModel> {
    let corpus: Vec<Vec<WordId>> = world.train_texts.iter().map(|(_, w)| w.clone()).collect();
    Ok(NgramModel::train(&corpus, order, &world.table)?)
}

pub fn write_archive(path: &Path, archive: &LatticeArchive, table: &SymbolTable) -> Result<()> {
    write_file(path, |w| Ok(write_lattice_text(archive, table, w)?))
}

/// Writes `<stem>.lat.txt`, `<stem>.ref` and `<stem>.targets`.
pub fn write_corpus(dir: &Path, stem: &str, corpus: &GeneratedCorpus, table: &SymbolTable) -> Result<()> {
    write_archive(&dir.join(format!("{stem}.lat.txt")), &corpus.archive, table)?;
    let refs: Vec<(String, Vec<WordId>)> = corpus
        .archive
        .lattices
        .iter()
        .map(|l| (l.utterance_id.clone(), corpus.archive.references[&l.utterance_id].clone()))
        .collect();
    write_file(&dir.join(format!("{stem}.ref")), |w| write_texts(&refs, table, w))?;
    write_file(&dir.join(format!("{stem}.targets")), |w| Ok(write_targets(&corpus.targets, w)?))
}

/// Pairs every lattice with its oracle labels.
pub fn training_examples(lattices: &[Lattice], targets: &BTreeMap<String, Vec<u8>>) -> Result<Vec<TrainingExample>> {
    lattices
        .iter()
        .map(|lat| {
            let labels = targets
                .get(&lat.utterance_id)
                .ok_or_else(|| CliError::Data(format!("no targets for {}", lat.utterance_id)))?;
            Ok(TrainingExample::new(prepare_lattice(lat)?, labels.clone())?)
        })
        .collect()
}

fn method_summary(report: &RescoreReport, refs: &BTreeMap<String, Vec<WordId>>) -> Result<MethodSummary> {
    let w = report.wer(refs)?;
    Ok(MethodSummary {
        method: report.method.clone(),
        wer: w.wer,
        errors: w.stats.errors(),
        model_calls: report.model_calls,
        avg_call_length: report.avg_call_length(),
        skipped: report.skipped.len(),
    })
}

fn write_report(path: &Path, report: &RescoreReport, table: &SymbolTable, refs: &BTreeMap<String, Vec<WordId>>) -> Result<()> {
    write_file(path, |w| Ok(report.write(w, table, Some(refs))?))
}

/// Runs every stage and writes all outputs into `cfg.paths.out_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, args: &[String]) -> Result<(PipelineSummary, Timing)> {
    cfg.validate()?;
    let out: PathBuf = cfg.paths.out_dir.clone();
    let mut clock = Clock::new();

    let world = load_world(cfg)?;
    if cfg.paths.world_dir.is_none() {
        world.save(&out.join("world"))?;
    }
    let lm = train_lm(&world, cfg.generation.ngram_order)?;
    write_file(&out.join("words.txt"), |w| Ok(ltlm_core::io::write_symbol_table(&world.table, w)?))?;
    write_file(&out.join("lm.arpa"), |w| Ok(lm.write_arpa(w)?))?;
    clock.lap("world+lm");

    let train_models = GenerationModels {
        lexicon: &world.lexicon,
        lm: &lm,
        durations: &world.durations_est,
        fam: &world.fam_est,
        table: Some(&world.table),
    };
    let eval_models = GenerationModels {
        durations: &world.durations_true,
        fam: &world.fam_true,
        ..train_models
    };
    let train = generate_corpus(&world.train_texts, &train_models, &cfg.generation_config(derive_seed(cfg.seed, "latgen:train")));
    let eval = generate_corpus(&world.eval_texts, &eval_models, &cfg.eval_generation_config(derive_seed(cfg.seed, "latgen:eval")));
    if train.archive.is_empty() || eval.archive.is_empty() {
        return Err(CliError::Runtime("lattice generation produced an empty corpus".into()));
    }
    write_corpus(&out, "train", &train, &world.table)?;
    write_corpus(&out, "eval", &eval, &world.table)?;
    clock.lap("latgen");

    let vocab = world.table.id_bound();
    let examples = training_examples(&train.archive.lattices, &train.targets)?;
    let heldout_n = cfg.train.heldout.min(examples.len() / 2);
    let (fit, heldout) = examples.split_at(examples.len() - heldout_n);
    let ckpt_dir = out.join("ckpt");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| crate::error::io_err(&ckpt_dir, e))?;
    let (ltlm, epochs) = train_ltlm(
        LtLm::new(cfg.ltlm_config(vocab))?,
        cfg.train_config(),
        fit,
        heldout,
        Some(&ckpt_dir),
        |r| {
            log::info!(
                "ltlm epoch {}: train loss {:.4}, heldout auc {:?}",
                r.epoch,
                r.train_loss,
                r.heldout.as_ref().and_then(|h| h.auc)
            )
        },
    )?;
    ltlm.save(&out.join("ltlm.ckpt"))?;
    clock.lap("train-ltlm");

    let corpus: Vec<Vec<WordId>> = world.train_texts.iter().map(|(_, w)| w.clone()).collect();
    let (arlm, arlm_losses) = train_arlm(ArLm::new(cfg.arlm_config(vocab))?, cfg.arlm_train_config(), &corpus)?;
    arlm.save(&out.join("arlm.ckpt"))?;
    clock.lap("train-arlm");

    let weights = cfg.weights();
    let lattices = &eval.archive.lattices;
    let refs = &eval.archive.references;
    ltlm.reset_invocations();
    arlm.reset_invocations();
    let fp = first_pass_report(lattices, &weights)?;
    let single = single_shot_rescore(lattices, &ltlm, &weights, cfg.rescore.batch_size)?;
    clock.lap("rescore-single-shot");
    let nbest = nbest_rescore(lattices, &arlm, cfg.rescore.nbest, &weights)?;
    clock.lap("rescore-nbest");
    write_report(&out.join("first-pass.report"), &fp, &world.table, refs)?;
    write_report(&out.join("single-shot.report"), &single, &world.table, refs)?;
    write_report(&out.join("nbest.report"), &nbest, &world.table, refs)?;

    let summary = PipelineSummary {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        train_corpus: (&train.stats).into(),
        eval_corpus: (&eval.stats).into(),
        eval_lattices: lattices.len(),
        ref_words: refs.values().map(Vec::len).sum(),
        oracle_wer: eval.stats.oracle_wer,
        first_pass: method_summary(&fp, refs)?,
        single_shot: method_summary(&single, refs)?,
        nbest: method_summary(&nbest, refs)?,
        ltlm_epochs: epochs,
        arlm_losses,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    let mut manifest = Manifest::new("pipeline", args, cfg.seed, Some(cfg));
    manifest.outputs = list_outputs(&out)?;
    manifest.write(&out)?;
    let timing = clock.finish();
    write_json(&out.join(TIMING), &timing)?;
    Ok((summary, timing))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path, |w| {
        use std::io::Write;
        w.write_all(text.as_bytes())
            .and_then(|()| w.write_all(b"\n"))
            .map_err(|e| CliError::Data(e.to_string()))
    })
}

/// Relative paths of all files under `dir`, sorted.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| crate::error::io_err(&d, e))? {
            let path = entry.map_err(|e| crate::error::io_err(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(dir) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    Ok(out)
}
