//! Argument parsing and subcommand handlers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ltlm_core::align::oracle_errors;
use ltlm_core::io::{parse_lattice_text, read_symbol_table, read_transcripts, LatticeArchive};
use ltlm_core::seed::derive_seed;
use ltlm_core::{corpus_wer, oracle_path, Lattice, ScoreWeights, SymbolTable, WordId};
use ltlm_latgen::generate::read_targets;
use ltlm_latgen::world::ToyWorld;
use ltlm_latgen::{generate_corpus, GenerationModels};
use ltlm_model::{prepare_lattice, train_arlm, train_ltlm, ArLm, LtLm, TrainingExample};
use ltlm_rescore::{nbest_rescore, single_shot_rescore};

use crate::config::{ExperimentConfig, CONFIG_ENV};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::pipeline::{load_world, run_pipeline, train_lm, write_corpus, write_json};
use crate::world_io::{open, read_texts, write_file, WorldData};

#[derive(Debug, Parser)]
#[command(name = "ltlm", version, about = "Lattice generation, LT-LM training and lattice rescoring")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Config override, `section.key=value`; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker cap. Stages currently run on one thread, so values above 1
    /// change nothing.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log progress to stderr (`-vv` for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a toy world (lexicon, texts, alignments, FAM and duration models).
    MakeWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate lattices, references and oracle targets from texts.
    Latgen(LatgenArgs),
    /// Train an LT-LM on one or more lattice archives.
    TrainLtlm(TrainLtlmArgs),
    /// Train the autoregressive baseline LM on texts.
    TrainArlm {
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rescore a lattice archive.
    Rescore(RescoreArgs),
    /// Corpus WER of hypothesis transcripts against references.
    Wer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Oracle WER of a lattice archive.
    OracleWer {
        #[arg(long)]
        lattices: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        words: PathBuf,
    },
    /// Size and error statistics of a lattice archive.
    Stats {
        #[arg(long)]
        lattices: PathBuf,
        #[arg(long)]
        words: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Run the built-in invariant suite.
    Selftest {
        /// Smaller fixture counts.
        #[arg(long)]
        quick: bool,
    },
    /// Run the full experiment: world, lattices, training, rescoring, WER.
    Pipeline {
        /// Overrides `paths.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSet {
    /// Ground-truth FAM and durations (evaluation-style lattices).
    True,
    /// Models estimated from labeled data (training-style lattices).
    Estimated,
}

#[derive(Debug, Args)]
pub struct LatgenArgs {
    #[arg(long)]
    pub texts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output file stem inside `--out`.
    #[arg(long, default_value = "lattices")]
    pub stem: String,
    #[arg(long, value_enum, default_value = "estimated")]
    pub models: ModelSet,
}

#[derive(Debug, Args)]
pub struct TrainLtlmArgs {
    /// Lattice archives. Labels come from `<stem>.targets` beside each
    /// archive, or from oracle paths against `<stem>.ref`.
    #[arg(long = "mix", alias = "lattices", required = true, num_args = 1..)]
    pub archives: Vec<PathBuf>,
    #[arg(long)]
    pub words: PathBuf,
    /// Held-out archive for per-epoch evaluation.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RescoreMode {
    SingleShot,
    Nbest,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long, value_enum)]
    pub mode: RescoreMode,
    #[arg(long)]
    pub lattices: PathBuf,
    #[arg(long)]
    pub words: PathBuf,
    /// LT-LM checkpoint for single-shot, AR LM checkpoint for N-best.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// References; adds WER lines to the report.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub nbest: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

/// Output of one command: text for stdout.
pub type Outcome = String;

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("this command needs --config or {CONFIG_ENV}")))?;
    let mut overrides = cli.overrides.clone();
    if let Some(j) = cli.jobs {
        overrides.push(format!("jobs={j}"));
    }
    let cfg = ExperimentConfig::load(path, &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from_args<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Config(e.to_string()))?;
    run(&cli, &argv)
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<Outcome> {
    match &cli.command {
        Command::MakeWorld { out } => make_world(&load_config(cli)?, out, argv),
        Command::Latgen(a) => latgen(&load_config(cli)?, a, argv),
        Command::TrainLtlm(a) => train_ltlm_cmd(&load_config(cli)?, a, argv),
        Command::TrainArlm { texts, words, out } => train_arlm_cmd(&load_config(cli)?, texts, words, out, argv),
        Command::Rescore(a) => rescore(cli, a, argv),
        Command::Wer { hyp, reference } => wer(hyp, reference),
        Command::OracleWer {
            lattices,
            reference,
            words,
        } => oracle_wer(lattices, reference, words),
        Command::Stats {
            lattices,
            words,
            reference,
        } => stats(lattices, words, reference.as_deref()),
        Command::Selftest { quick } => {
            let results = crate::selftest::run_all(*quick);
            let text = crate::selftest::format_results(&results);
            if results.iter().all(|r| r.pass) {
                Ok(text)
            } else {
                print!("{text}");
                Err(CliError::Runtime("selftest failed".into()))
            }
        }
        Command::Pipeline { out } => {
            let mut cfg = load_config(cli)?;
            if let Some(o) = out {
                cfg.paths.out_dir = o.clone();
            }
            let (s, t) = run_pipeline(&cfg, argv)?;
            Ok(format!(
                "eval lattices {}\noracle WER {:.2}%\nfirst-pass WER {:.2}%\nsingle-shot WER {:.2}% ({} model calls)\n{} WER {:.2}% ({} model calls)\nruntime {:.1}s\n",
                s.eval_lattices,
                s.oracle_wer,
                s.first_pass.wer,
                s.single_shot.wer,
                s.single_shot.model_calls,
                s.nbest.method,
                s.nbest.wer,
                s.nbest.model_calls,
                t.total_secs
            ))
        }
    }
}

fn make_world(cfg: &ExperimentConfig, out: &Path, argv: &[String]) -> Result<Outcome> {
    let world = WorldData::from_world(&ToyWorld::build(cfg.world_config())?)?;
    world.save(out)?;
    Manifest::new("make-world", argv, cfg.seed, Some(cfg)).write(out)?;
    Ok(format!(
        "world with {} words, {} train and {} eval sentences written to {}\n",
        world.lexicon.len(),
        world.train_texts.len(),
        world.eval_texts.len(),
        out.display()
    ))
}

fn latgen(cfg: &ExperimentConfig, a: &LatgenArgs, argv: &[String]) -> Result<Outcome> {
    let world = load_world(cfg)?;
    let lm = train_lm(&world, cfg.generation.ngram_order)?;
    let texts = read_texts(&a.texts, &world.table)?;
    let (fam, durations) = match a.models {
        ModelSet::True => (&world.fam_true, &world.durations_true),
        ModelSet::Estimated => (&world.fam_est, &world.durations_est),
    };
    let models = GenerationModels {
        lexicon: &world.lexicon,
        lm: &lm,
        durations,
        fam,
        table: Some(&world.table),
    };
    let corpus = generate_corpus(&texts, &models, &cfg.generation_config(derive_seed(cfg.seed, &format!("latgen:{}", a.stem))));
    if corpus.archive.is_empty() {
        return Err(CliError::Runtime("no lattice could be generated".into()));
    }
    write_corpus(&a.out, &a.stem, &corpus, &world.table)?;
    write_file(&a.out.join("words.txt"), |w| Ok(ltlm_core::io::write_symbol_table(&world.table, w)?))?;
    Manifest::new("latgen", argv, cfg.seed, Some(cfg)).write(&a.out)?;
    let s = &corpus.stats;
    Ok(format!(
        "generated {} lattices ({} skipped, {} retried); arcs/word {:.2}; oracle WER {:.2}%; first-pass WER {:.2}%\n",
        s.generated, s.skipped, s.retried, s.arcs_per_word, s.oracle_wer, s.first_pass_wer
    ))
}

pub fn read_words(path: &Path) -> Result<SymbolTable> {
    Ok(read_symbol_table(open(path)?)?)
}

pub fn read_archive(path: &Path, table: &SymbolTable) -> Result<LatticeArchive> {
    Ok(parse_lattice_text(open(path)?, table, true)?)
}

fn sibling(archive: &Path, ext: &str) -> PathBuf {
    let name = archive.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".lat.txt").unwrap_or(&name).to_string();
    archive.with_file_name(format!("{stem}.{ext}"))
}

/// Labeled examples from an archive and its `.targets` or `.ref` sibling.
pub fn labeled_examples(path: &Path, table: &SymbolTable, seed: u64) -> Result<Vec<TrainingExample>> {
    let archive = read_archive(path, table)?;
    let targets_path = sibling(path, "targets");
    let ref_path = sibling(path, "ref");
    if targets_path.exists() {
        let targets = read_targets(open(&targets_path)?)?;
        crate::pipeline::training_examples(&archive.lattices, &targets)
    } else if ref_path.exists() {
        let refs: BTreeMap<String, Vec<WordId>> = read_texts(&ref_path, table)?.into_iter().collect();
        archive
            .lattices
            .iter()
            .map(|lat| {
                let r = refs
                    .get(&lat.utterance_id)
                    .ok_or_else(|| CliError::Data(format!("no reference for {}", lat.utterance_id)))?;
                let aug = prepare_lattice(lat)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("oracle:{}", lat.utterance_id)));
                let labels = oracle_path(&aug, r, &mut rng)?.labels;
                Ok(TrainingExample::new(aug, labels)?)
            })
            .collect()
    } else {
        Err(CliError::Data(format!(
            "{}: neither {} nor {} exists",
            path.display(),
            targets_path.display(),
            ref_path.display()
        )))
    }
}

fn train_ltlm_cmd(cfg: &ExperimentConfig, a: &TrainLtlmArgs, argv: &[String]) -> Result<Outcome> {
    let table = read_words(&a.words)?;
    let mut data = Vec::new();
    for p in &a.archives {
        data.extend(labeled_examples(p, &table, cfg.seed)?);
    }
    let heldout = match &a.heldout {
        Some(p) => labeled_examples(p, &table, cfg.seed)?,
        None => Vec::new(),
    };
    let ckpt = a.out.join("ckpt");
    std::fs::create_dir_all(&ckpt).map_err(|e| crate::error::io_err(&ckpt, e))?;
    let (model, reports) = train_ltlm(
        LtLm::new(cfg.ltlm_config(table.id_bound()))?,
        cfg.train_config(),
        &data,
        &heldout,
        Some(&ckpt),
        |r| log::info!("epoch {}: loss {:.4}", r.epoch, r.train_loss),
    )?;
    model.save(&a.out.join("ltlm.ckpt"))?;
    write_json(&a.out.join("epochs.json"), &reports)?;
    Manifest::new("train-ltlm", argv, cfg.seed, Some(cfg)).write(&a.out)?;
    let last = reports.last().map_or(f64::NAN, |r| r.train_loss);
    Ok(format!("trained on {} lattices; final train loss {last:.4}\n", data.len()))
}

fn train_arlm_cmd(cfg: &ExperimentConfig, texts: &Path, words: &Path, out: &Path, argv: &[String]) -> Result<Outcome> {
    let table = read_words(words)?;
    let corpus: Vec<Vec<WordId>> = read_texts(texts, &table)?.into_iter().map(|(_, w)| w).collect();
    let (model, losses) = train_arlm(ArLm::new(cfg.arlm_config(table.id_bound()))?, cfg.arlm_train_config(), &corpus)?;
    model.save(&out.join("arlm.ckpt"))?;
    write_json(&out.join("losses.json"), &losses)?;
    Manifest::new("train-arlm", argv, cfg.seed, Some(cfg)).write(out)?;
    Ok(format!(
        "trained on {} sentences; final loss {:.4}\n",
        corpus.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    ))
}

fn rescore(cli: &Cli, a: &RescoreArgs, argv: &[String]) -> Result<Outcome> {
    // A config is optional here; flags win over it.
    let cfg = match &cli.config {
        Some(_) => Some(load_config(cli)?),
        None => None,
    };
    let base = cfg.as_ref().map(ExperimentConfig::weights).unwrap_or_default();
    let weights = ScoreWeights {
        a: a.a.unwrap_or(base.a),
        l1: a.l1.unwrap_or(base.l1),
        l2: a.l2.unwrap_or(base.l2),
    };
    let table = read_words(&a.words)?;
    let archive = read_archive(&a.lattices, &table)?;
    let refs = match &a.reference {
        Some(p) => Some(read_texts(p, &table)?.into_iter().collect::<BTreeMap<_, _>>()),
        None => None,
    };
    let report = match a.mode {
        RescoreMode::SingleShot => {
            let batch = a.batch.or(cfg.as_ref().map(|c| c.rescore.batch_size)).unwrap_or(1);
            single_shot_rescore(&archive.lattices, &LtLm::load(&a.model)?, &weights, batch)?
        }
        RescoreMode::Nbest => {
            let n = a.nbest.or(cfg.as_ref().map(|c| c.rescore.nbest)).unwrap_or(50);
            nbest_rescore(&archive.lattices, &ArLm::load(&a.model)?, n, &weights)?
        }
    };
    write_file(&a.out, |w| Ok(report.write(w, &table, refs.as_ref())?))?;
    if let Some(dir) = a.out.parent() {
        let seed = cfg.as_ref().map_or(0, |c| c.seed);
        Manifest::new("rescore", argv, seed, cfg.as_ref()).write(if dir.as_os_str().is_empty() { Path::new(".") } else { dir })?;
    }
    let mut text = format!(
        "{}: {} utterances, {} skipped, {} model calls\n",
        report.method,
        report.utterances.len(),
        report.skipped.len(),
        report.model_calls
    );
    if let Some(refs) = &refs {
        text.push_str(&format!("WER {:.2}%\n", report.wer(refs)?.wer));
    }
    Ok(text)
}

fn read_string_transcripts(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (id, words) in read_transcripts(open(path)?)? {
        if out.insert(id.clone(), words).is_some() {
            return Err(CliError::Data(format!("{}: duplicate utterance {id}", path.display())));
        }
    }
    Ok(out)
}

fn wer(hyp: &Path, reference: &Path) -> Result<Outcome> {
    let hyps = read_string_transcripts(hyp)?;
    let refs = read_string_transcripts(reference)?;
    let w = corpus_wer(&hyps, &refs)?;
    Ok(format!(
        "WER {:.2}% [ {} / {}, {} ins, {} del, {} sub ]\n",
        w.wer,
        w.stats.errors(),
        w.stats.ref_len,
        w.stats.insertions,
        w.stats.deletions,
        w.stats.substitutions
    ))
}

fn lattice_refs(lattices: &[Lattice], path: &Path, table: &SymbolTable) -> Result<BTreeMap<String, Vec<WordId>>> {
    let refs: BTreeMap<String, Vec<WordId>> = read_texts(path, table)?.into_iter().collect();
    for lat in lattices {
        if !refs.contains_key(&lat.utterance_id) {
            return Err(CliError::Data(format!("no reference for {}", lat.utterance_id)));
        }
    }
    Ok(refs)
}

fn oracle_wer(lattices: &Path, reference: &Path, words: &Path) -> Result<Outcome> {
    let table = read_words(words)?;
    let archive = read_archive(lattices, &table)?;
    let refs = lattice_refs(&archive.lattices, reference, &table)?;
    let (mut errors, mut len) = (0, 0);
    for lat in &archive.lattices {
        let r = &refs[&lat.utterance_id];
        errors += oracle_errors(lat, r)?;
        len += r.len();
    }
    let pct = if len == 0 { 0.0 } else { 100.0 * errors as f64 / len as f64 };
    Ok(format!("Oracle WER {pct:.2}% [ {errors} / {len} ]\n"))
}

fn stats(lattices: &Path, words: &Path, reference: Option<&Path>) -> Result<Outcome> {
    let table = read_words(words)?;
    let archive = read_archive(lattices, &table)?;
    let n = archive.lattices.len();
    let arcs: usize = archive.lattices.iter().map(|l| l.arcs.len()).sum();
    let states: usize = archive.lattices.iter().map(|l| l.num_states).sum();
    let max_states = archive.lattices.iter().map(|l| l.num_states).max().unwrap_or(0);
    let per = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    let mut text = format!(
        "lattices {n}\navg arcs {:.2}\navg states {:.2}\nmax states {max_states}\n",
        per(arcs),
        per(states)
    );
    if let Some(r) = reference {
        let refs = lattice_refs(&archive.lattices, r, &table)?;
        let ref_words: usize = archive.lattices.iter().map(|l| refs[&l.utterance_id].len()).sum();
        let first = ltlm_rescore::first_pass_report(&archive.lattices, &ScoreWeights::default())?;
        let oracle: usize = archive
            .lattices
            .iter()
            .map(|l| oracle_errors(l, &refs[&l.utterance_id]))
            .sum::<std::result::Result<usize, _>>()?;
        let pct = |e: usize| if ref_words == 0 { 0.0 } else { 100.0 * e as f64 / ref_words as f64 };
        text.push_str(&format!(
            "arcs per word {:.2}\noracle WER {:.2}%\nfirst-pass WER {:.2}%\n",
            if ref_words == 0 { 0.0 } else { arcs as f64 / ref_words as f64 },
            pct(oracle),
            first.wer(&refs)?.wer
        ));
    }
    Ok(text)
}
