//! Lattice transformer: a non-causal encoder over the arc set of a lattice
//! that predicts, per arc, the probability of lying on the oracle path.
//!
//! An arc `(src, dst, word)` is embedded as
//! `word_emb[word] + src_pos[src] + dst_pos[dst]`, where state indices come
//! from the topological order of the augmented lattice. Arcs of one lattice
//! attend to each other without any mask; arcs of different lattices in a
//! batch never interact.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ltlm_autodiff::{grad_check, AutodiffError, Checkpoint, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var};
use ltlm_core::{Lattice, WordId, UNK};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{encoder_block, init_block, p, segments_from_lengths, uniform, BlockDims, DropoutCtx};
use crate::ModelError;

/// Full-size hyper-parameters, expressible but far too slow for this
/// implementation.
pub const LARGE_SCALE: LtLmConfig = LtLmConfig {
    vocab_size: 200_000,
    d_model: 816,
    layers: 8,
    heads: 8,
    ff_dim: 2048,
    max_positions: 256,
    dropout: 0.1,
    seed: 0,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtLmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for LtLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_positions: 256,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl LtLmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab_size <= UNK as usize {
            return bad(format!("vocab_size {} must exceed the reserved ids", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_positions == 0 {
            return bad("layers, ff_dim and max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub(crate) fn dims(&self) -> BlockDims {
        BlockDims {
            d_model: self.d_model,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }
}

/// Padded arc batch of `batch` lattices with at most `max_arcs` arcs each.
/// All vectors are row-major `batch x max_arcs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArcBatch {
    pub batch: usize,
    pub max_arcs: usize,
    pub words: Vec<WordId>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub mask: Vec<bool>,
    pub targets: Vec<f64>,
}

impl ArcBatch {
    /// Packs lattices (already augmented and sorted) with optional per-arc
    /// 0/1 targets.
    pub fn from_lattices(lattices: &[&Lattice], targets: Option<&[&[u8]]>) -> Self {
        let batch = lattices.len();
        let max_arcs = lattices.iter().map(|l| l.arcs.len()).max().unwrap_or(0);
        let n = batch * max_arcs;
        let mut out = Self {
            batch,
            max_arcs,
            words: vec![0; n],
            src: vec![0; n],
            dst: vec![0; n],
            mask: vec![false; n],
            targets: vec![0.0; n],
        };
        for (b, lat) in lattices.iter().enumerate() {
            for (a, arc) in lat.arcs.iter().enumerate() {
                let i = b * max_arcs + a;
                out.words[i] = arc.word;
                out.src[i] = arc.src;
                out.dst[i] = arc.dst;
                out.mask[i] = true;
                if let Some(t) = targets {
                    out.targets[i] = f64::from(t[b][a]);
                }
            }
        }
        out
    }

    /// Flat indices of valid slots in row-major order and the number of
    /// valid slots per lattice.
    pub fn packed(&self) -> (Vec<usize>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut lengths = Vec::with_capacity(self.batch);
        for b in 0..self.batch {
            let before = rows.len();
            for a in 0..self.max_arcs {
                let i = b * self.max_arcs + a;
                if self.mask[i] {
                    rows.push(i);
                }
            }
            lengths.push(rows.len() - before);
        }
        (rows, lengths)
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn check_positions(batch: &ArcBatch, max_positions: usize) -> Result<(), ModelError> {
    for i in 0..batch.mask.len() {
        if batch.mask[i] {
            let state = batch.src[i].max(batch.dst[i]);
            if state >= max_positions {
                return Err(ModelError::PositionOverflow { state, max: max_positions });
            }
        }
    }
    Ok(())
}

fn word_index(w: WordId, vocab_size: usize) -> usize {
    if (w as usize) < vocab_size {
        w as usize
    } else {
        UNK as usize
    }
}

pub fn init_params(config: &LtLmConfig) -> Result<ParamStore, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let mut store = ParamStore::new();
    store.add("word_emb", uniform(&mut rng, &[config.vocab_size, d], 0.1))?;
    store.add("src_pos", uniform(&mut rng, &[config.max_positions, d], 0.1))?;
    store.add("dst_pos", uniform(&mut rng, &[config.max_positions, d], 0.1))?;
    for l in 0..config.layers {
        init_block(&mut store, &format!("blocks.{l}"), config.dims(), &mut rng)?;
    }
    store.add("ln_f.gamma", Tensor::filled(&[1, d], 1.0))?;
    store.add("ln_f.beta", Tensor::zeros(&[1, d]))?;
    store.add("out.w", uniform(&mut rng, &[d, 1], (6.0 / (d + 1) as f64).sqrt()))?;
    store.add("out.b", Tensor::zeros(&[1, 1]))?;
    Ok(store)
}

/// Arc embeddings for the valid slots, packed row by row.
pub fn embed_graph(config: &LtLmConfig, store: &ParamStore, tape: &Tape, batch: &ArcBatch) -> Result<Var, ModelError> {
    check_positions(batch, config.max_positions)?;
    let (rows, _) = batch.packed();
    let words: Vec<usize> = rows.iter().map(|&i| word_index(batch.words[i], config.vocab_size)).collect();
    let src: Vec<usize> = rows.iter().map(|&i| batch.src[i]).collect();
    let dst: Vec<usize> = rows.iter().map(|&i| batch.dst[i]).collect();
    let we = tape.gather(p(tape, store, "word_emb")?, &words)?;
    let se = tape.gather(p(tape, store, "src_pos")?, &src)?;
    let de = tape.gather(p(tape, store, "dst_pos")?, &dst)?;
    Ok(tape.add(tape.add(we, se)?, de)?)
}

/// Per-arc logits for the valid slots (packed, `N x 1`).
pub fn logits_graph(
    config: &LtLmConfig,
    store: &ParamStore,
    tape: &Tape,
    batch: &ArcBatch,
    dropout: Option<DropoutCtx>,
) -> Result<Var, ModelError> {
    let (_, lengths) = batch.packed();
    if lengths.iter().all(|&l| l == 0) {
        return Err(ModelError::EmptyBatch);
    }
    let segments: Vec<_> = segments_from_lengths(&lengths).into_iter().filter(|s| s.len > 0).collect();
    let mut x = embed_graph(config, store, tape, batch)?;
    if let Some(d) = dropout {
        x = tape.dropout(x, d.rate, ltlm_core::seed::derive_seed_n(d.seed, &[u64::MAX, d.step]))?;
    }
    for l in 0..config.layers {
        x = encoder_block(tape, store, &format!("blocks.{l}"), l, x, &segments, config.dims(), false, dropout)?;
    }
    let h = tape.layer_norm(x, p(tape, store, "ln_f.gamma")?, p(tape, store, "ln_f.beta")?)?;
    Ok(tape.add_row(tape.matmul(h, p(tape, store, "out.w")?)?, p(tape, store, "out.b")?)?)
}

/// Mean BCE over the valid slots of `batch`, as a tape scalar.
pub fn loss_graph(
    config: &LtLmConfig,
    store: &ParamStore,
    tape: &Tape,
    batch: &ArcBatch,
    dropout: Option<DropoutCtx>,
) -> Result<Var, ModelError> {
    let logits = logits_graph(config, store, tape, batch, dropout)?;
    let (rows, _) = batch.packed();
    let targets: Vec<f64> = rows.iter().map(|&i| batch.targets[i]).collect();
    Ok(tape.bce_with_logits(logits, &targets, &vec![true; rows.len()])?)
}

/// Finite-difference check of the full forward pass plus BCE on `batch`,
/// without dropout.
pub fn grad_check_model(
    config: &LtLmConfig,
    params: &ParamStore,
    batch: &ArcBatch,
    check: GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    let mut failure = None;
    let report = grad_check(params, check, |store| {
        let tape = Tape::new();
        match loss_graph(config, store, &tape, batch, None) {
            Ok(loss) => Ok((tape.value(loss)?.item(), tape.backward(loss)?.param_grads(store))),
            Err(ModelError::Autodiff(e)) => Err(e),
            Err(e) => {
                failure = Some(e);
                Err(AutodiffError::DisconnectedLoss)
            }
        }
    });
    match (report, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE of probabilities against targets over `mask`, evaluated in
/// logit space with logits clamped to `[-40, 40]`. Zero for an empty mask.
pub fn bce_loss(probabilities: &[f64], targets: &[f64], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..probabilities.len() {
        if !mask[i] {
            continue;
        }
        let p = probabilities[i].clamp(0.0, 1.0);
        let x = (p.ln() - (1.0 - p).ln()).clamp(-40.0, 40.0);
        total += x.max(0.0) - x * targets[i] + (-x.abs()).exp().ln_1p();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Debug)]
pub struct LtLm {
    config: LtLmConfig,
    params: ParamStore,
    calls: AtomicU64,
}

impl Clone for LtLm {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            params: self.params.clone(),
            calls: AtomicU64::new(self.invocations()),
        }
    }
}

impl LtLm {
    pub fn new(config: LtLmConfig) -> Result<Self, ModelError> {
        Ok(Self {
            params: init_params(&config)?,
            config,
            calls: AtomicU64::new(0),
        })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: LtLmConfig, params: ParamStore) -> Result<Self, ModelError> {
        let reference = init_params(&config)?;
        for (name, t) in reference.iter() {
            match params.by_name(name) {
                Some(x) if x.shape() == t.shape() => {}
                Some(x) => {
                    return Err(ModelError::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        x.shape(),
                        t.shape()
                    )))
                }
                None => return Err(ModelError::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        let mut ordered = ParamStore::new();
        for (name, _) in reference.iter() {
            ordered.add(name, params.by_name(name).expect("checked above").clone())?;
        }
        Ok(Self {
            config,
            params: ordered,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &LtLmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of forward invocations so far.
    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_invocations(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    /// Arc embeddings as a `batch x max_arcs x d` tensor, zero at masked slots.
    pub fn embed_arcs(&self, batch: &ArcBatch) -> Result<Tensor, ModelError> {
        let d = self.config.d_model;
        let mut out = Tensor::zeros(&[batch.batch, batch.max_arcs, d]);
        let (rows, _) = batch.packed();
        if rows.is_empty() {
            check_positions(batch, self.config.max_positions)?;
            return Ok(out);
        }
        let tape = Tape::new();
        let e = tape.value(embed_graph(&self.config, &self.params, &tape, batch)?)?;
        for (r, &i) in rows.iter().enumerate() {
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&e.data()[r * d..(r + 1) * d]);
        }
        Ok(out)
    }

    /// Eval-mode per-arc probabilities (`batch x max_arcs`, 0 at masked
    /// slots). One call increments the invocation counter by one.
    pub fn forward(&self, batch: &ArcBatch) -> Result<Vec<f64>, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let logits = self.forward_logits(batch)?;
        Ok(logits
            .iter()
            .zip(&batch.mask)
            .map(|(&x, &m)| if m { sigmoid(x) } else { 0.0 })
            .collect())
    }

    /// Eval-mode logits (`batch x max_arcs`, 0 at masked slots). Does not
    /// touch the invocation counter.
    pub fn forward_logits(&self, batch: &ArcBatch) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; batch.batch * batch.max_arcs];
        let (rows, _) = batch.packed();
        if rows.is_empty() {
            check_positions(batch, self.config.max_positions)?;
            return Ok(out);
        }
        let tape = Tape::new();
        let logits = tape.value(logits_graph(&self.config, &self.params, &tape, batch, None)?)?;
        for (r, &i) in rows.iter().enumerate() {
            out[i] = logits.data()[r];
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({"kind": "ltlm", "config": self.config}),
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.meta["kind"] != "ltlm" {
            return Err(ModelError::Checkpoint("not a lattice transformer checkpoint".into()));
        }
        let config: LtLmConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_params(config, ckpt.tensors.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
