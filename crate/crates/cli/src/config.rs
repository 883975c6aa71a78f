//! Experiment configuration: one TOML file, optionally overridden by
//! `key=value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ltlm_autodiff::AdamConfig;
use ltlm_core::ScoreWeights;
use ltlm_latgen::world::WorldConfig;
use ltlm_latgen::{DecoderConfig, GenerationConfig};
use ltlm_model::{ArLmConfig, ArTrainConfig, LtLmConfig, TrainConfig};

use crate::error::{CliError, Result};

/// Names the default config file when no `--config` flag is given.
pub const CONFIG_ENV: &str = "LTLM_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub world: WorldSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub ltlm: LtLmSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub arlm: ArLmSection,
    #[serde(default)]
    pub rescore: RescoreSection,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// A world written by `make-world`; when absent the world is built from
    /// the `[world]` section.
    pub world_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            world_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub leak: f64,
    pub kappa: f64,
    pub train_sentences: usize,
    pub eval_sentences: usize,
    pub labeled_sentences: usize,
    pub min_groups: usize,
    pub max_groups: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            leak: w.leak,
            kappa: w.kappa,
            train_sentences: w.train_sentences,
            eval_sentences: w.eval_sentences,
            labeled_sentences: w.labeled_sentences,
            min_groups: w.min_groups,
            max_groups: w.max_groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub lattice_beam: f64,
    pub max_active: usize,
    /// Output pruning beam of training lattices.
    pub prune_beam: f64,
    /// Token and output pruning beams of evaluation lattices.
    pub eval_lattice_beam: f64,
    pub eval_prune_beam: f64,
    pub acoustic_scale: f64,
    pub lm_weight: f64,
    /// Dirichlet concentration of synthesized posteriors; 0 copies FAM rows.
    pub kappa: f64,
    pub retries: usize,
    pub max_beam: f64,
    pub strict: bool,
    pub ngram_order: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let d = DecoderConfig::default();
        let g = GenerationConfig::default();
        Self {
            lattice_beam: d.lattice_beam,
            max_active: d.max_active,
            prune_beam: d.prune_beam,
            eval_lattice_beam: d.lattice_beam,
            eval_prune_beam: 8.0,
            acoustic_scale: d.acoustic_scale,
            lm_weight: d.lm_weight,
            kappa: WorldConfig::default().kappa,
            retries: g.retries,
            max_beam: g.max_beam,
            strict: g.strict,
            ngram_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtLmSection {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for LtLmSection {
    fn default() -> Self {
        let c = LtLmConfig::default();
        Self {
            d_model: c.d_model,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_positions: c.max_positions,
            dropout: c.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    /// Training lattices held out for per-epoch evaluation.
    pub heldout: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            warmup_steps: t.adam.warmup_steps,
            heldout: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArLmSection {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
}

impl Default for ArLmSection {
    fn default() -> Self {
        let c = ArLmConfig::default();
        let t = ArTrainConfig::default();
        Self {
            d_model: c.d_model,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_len: c.max_len,
            dropout: c.dropout,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            warmup_steps: t.adam.warmup_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RescoreSection {
    pub a: f64,
    pub l1: f64,
    pub l2: f64,
    pub nbest: usize,
    pub batch_size: usize,
}

impl Default for RescoreSection {
    fn default() -> Self {
        Self {
            a: 1.0,
            l1: 1.0,
            l2: 0.8,
            nbest: 50,
            batch_size: 1,
        }
    }
}

/// Parses `key.path=value`; the value is read as a TOML value and falls
/// back to a plain string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn apply_override(root: &mut toml::Table, key: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = key.split_last().expect("non-empty key");
    let mut table = root;
    for part in parents {
        let entry = table
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key {} crosses a non-table value", key.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, and resolves relative paths
    /// against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for spec in overrides {
            let (key, value) = parse_override(spec)?;
            apply_override(&mut root, &key, value)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = self.paths.world_dir.as_mut() {
            fix(w);
        }
        fix(&mut self.paths.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(w) = &self.paths.world_dir {
            if !w.is_dir() {
                return bad(format!("world_dir {} does not exist", w.display()));
            }
        }
        let w = &self.world;
        if !(0.0..0.5).contains(&w.leak) {
            return bad(format!("world.leak {} must lie in [0, 0.5)", w.leak));
        }
        if w.kappa < 0.0 || self.generation.kappa < 0.0 {
            return bad("kappa must be non-negative".into());
        }
        if w.min_groups == 0 || w.min_groups > w.max_groups {
            return bad("world groups must satisfy 1 <= min_groups <= max_groups".into());
        }
        let g = &self.generation;
        if !(g.lattice_beam > 0.0 && g.prune_beam > 0.0 && g.eval_prune_beam > 0.0 && g.max_beam >= g.lattice_beam.max(g.eval_lattice_beam)) {
            return bad("generation beams must be positive and max_beam must cover the token beams".into());
        }
        if g.max_active == 0 || g.ngram_order == 0 {
            return bad("generation.max_active and ngram_order must be positive".into());
        }
        if self.train.batch_size == 0 || self.arlm.batch_size == 0 || self.rescore.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.rescore.nbest == 0 {
            return bad("rescore.nbest must be positive".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be positive".into());
        }
        self.ltlm_config(64).validate()?;
        self.arlm_config(64).validate()?;
        Ok(())
    }

    /// Stable digest of the effective configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn world_config(&self) -> WorldConfig {
        let w = &self.world;
        WorldConfig {
            seed: self.seed,
            leak: w.leak,
            kappa: w.kappa,
            train_sentences: w.train_sentences,
            eval_sentences: w.eval_sentences,
            labeled_sentences: w.labeled_sentences,
            min_groups: w.min_groups,
            max_groups: w.max_groups,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let g = &self.generation;
        DecoderConfig {
            lattice_beam: g.lattice_beam,
            max_active: g.max_active,
            prune_beam: g.prune_beam,
            acoustic_scale: g.acoustic_scale,
            lm_weight: g.lm_weight,
        }
    }

    pub fn generation_config(&self, seed: u64) -> GenerationConfig {
        let g = &self.generation;
        GenerationConfig {
            decoder: self.decoder_config(),
            kappa: (g.kappa > 0.0).then_some(g.kappa),
            retries: g.retries,
            max_beam: g.max_beam,
            strict: g.strict,
            seed,
        }
    }

    /// Generation settings for evaluation lattices.
    pub fn eval_generation_config(&self, seed: u64) -> GenerationConfig {
        let mut g = self.generation_config(seed);
        g.decoder.lattice_beam = self.generation.eval_lattice_beam;
        g.decoder.prune_beam = self.generation.eval_prune_beam;
        g
    }

    pub fn ltlm_config(&self, vocab_size: usize) -> LtLmConfig {
        let c = &self.ltlm;
        LtLmConfig {
            vocab_size,
            d_model: c.d_model,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_positions: c.max_positions,
            dropout: c.dropout,
            seed: ltlm_core::seed::derive_seed(self.seed, "ltlm:init"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                warmup_steps: t.warmup_steps,
                ..AdamConfig::default()
            },
            seed: ltlm_core::seed::derive_seed(self.seed, "ltlm:train"),
        }
    }

    pub fn arlm_config(&self, vocab_size: usize) -> ArLmConfig {
        let c = &self.arlm;
        ArLmConfig {
            vocab_size,
            d_model: c.d_model,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_len: c.max_len,
            dropout: c.dropout,
            seed: ltlm_core::seed::derive_seed(self.seed, "arlm:init"),
        }
    }

    pub fn arlm_train_config(&self) -> ArTrainConfig {
        let c = &self.arlm;
        ArTrainConfig {
            epochs: c.epochs,
            batch_size: c.batch_size,
            adam: AdamConfig {
                lr: c.lr,
                warmup_steps: c.warmup_steps,
                ..AdamConfig::default()
            },
            seed: ltlm_core::seed::derive_seed(self.seed, "arlm:train"),
        }
    }

    pub fn weights(&self) -> ScoreWeights {
        let r = &self.rescore;
        ScoreWeights {
            a: r.a,
            l1: r.l1,
            l2: r.l2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let e = ExperimentConfig::from_toml("[world]\nleak = 0.3\n", &[], Path::new(".")).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("seed = 1\n[world]\nleek = 0.3\n", &[], Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("leek"), "{e}");
    }

    #[test]
    fn overrides_win_over_the_file() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[rescore]\nl2 = 0.5\n",
            &["rescore.l2=0".into(), "seed=7".into(), "paths.out_dir=elsewhere".into()],
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.rescore.l2, 0.0);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/base/elsewhere"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml("seed = 1\n", &[], Path::new(".")).unwrap();
        let b = ExperimentConfig::from_toml("seed = 1\n[rescore]\nl2 = 0.8\n", &[], Path::new(".")).unwrap();
        let c = ExperimentConfig::from_toml("seed = 2\n", &[], Path::new(".")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn missing_world_dir_fails_validation() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[paths]\nworld_dir = \"/no/such/dir\"\n",
            &[],
            Path::new("."),
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
