//! Small causal transformer language model used as the N-best baseline.
//!
//! Input is `<s> w1 .. wn`, the targets are `w1 .. wn </s>`. Scoring one
//! hypothesis is one model invocation.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ltlm_autodiff::{Adam, AdamConfig, Checkpoint, ParamStore, Tape, Tensor, Var};
use ltlm_core::seed::derive_seed_n;
use ltlm_core::{WordId, BOS, EOS, UNK};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{encoder_block, init_block, p, segments_from_lengths, uniform, BlockDims, DropoutCtx};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArLmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Rows of the position table; later positions reuse the last row.
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ArLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_len: 64,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ArLmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab_size <= UNK as usize {
            return bad(format!("vocab_size {} must exceed the reserved ids", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return bad("layers, ff_dim and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn dims(&self) -> BlockDims {
        BlockDims {
            d_model: self.d_model,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }
}

fn init_params(config: &ArLmConfig) -> Result<ParamStore, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (d, v) = (config.d_model, config.vocab_size);
    let mut store = ParamStore::new();
    store.add("tok_emb", uniform(&mut rng, &[v, d], 0.1))?;
    store.add("pos_emb", uniform(&mut rng, &[config.max_len, d], 0.1))?;
    for l in 0..config.layers {
        init_block(&mut store, &format!("blocks.{l}"), config.dims(), &mut rng)?;
    }
    store.add("ln_f.gamma", Tensor::filled(&[1, d], 1.0))?;
    store.add("ln_f.beta", Tensor::zeros(&[1, d]))?;
    store.add("out.w", uniform(&mut rng, &[d, v], (6.0 / (d + v) as f64).sqrt()))?;
    store.add("out.b", Tensor::zeros(&[1, v]))?;
    Ok(store)
}

fn token(w: WordId, vocab_size: usize) -> usize {
    if (w as usize) < vocab_size {
        w as usize
    } else {
        UNK as usize
    }
}

/// `(inputs, targets)` for one sentence.
fn io_tokens(sentence: &[WordId], vocab_size: usize) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = vec![BOS as usize];
    inputs.extend(sentence.iter().map(|&w| token(w, vocab_size)));
    let mut targets: Vec<usize> = inputs[1..].to_vec();
    targets.push(EOS as usize);
    (inputs, targets)
}

/// Next-token logits for every input position of every sentence, packed.
fn logits_graph(
    config: &ArLmConfig,
    store: &ParamStore,
    tape: &Tape,
    sentences: &[&[WordId]],
    dropout: Option<DropoutCtx>,
) -> Result<(Var, Vec<usize>), ModelError> {
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    let mut lengths = Vec::new();
    for s in sentences {
        let (inp, tgt) = io_tokens(s, config.vocab_size);
        positions.extend((0..inp.len()).map(|i| i.min(config.max_len - 1)));
        lengths.push(inp.len());
        tokens.extend(inp);
        targets.extend(tgt);
    }
    let te = tape.gather(p(tape, store, "tok_emb")?, &tokens)?;
    let pe = tape.gather(p(tape, store, "pos_emb")?, &positions)?;
    let mut x = tape.add(te, pe)?;
    if let Some(d) = dropout {
        x = tape.dropout(x, d.rate, derive_seed_n(d.seed, &[u64::MAX, d.step]))?;
    }
    let segments = segments_from_lengths(&lengths);
    for l in 0..config.layers {
        x = encoder_block(tape, store, &format!("blocks.{l}"), l, x, &segments, config.dims(), true, dropout)?;
    }
    let h = tape.layer_norm(x, p(tape, store, "ln_f.gamma")?, p(tape, store, "ln_f.beta")?)?;
    let logits = tape.add_row(tape.matmul(h, p(tape, store, "out.w")?)?, p(tape, store, "out.b")?)?;
    Ok((logits, targets))
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[derive(Debug)]
pub struct ArLm {
    config: ArLmConfig,
    params: ParamStore,
    calls: AtomicU64,
}

impl Clone for ArLm {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            params: self.params.clone(),
            calls: AtomicU64::new(self.invocations()),
        }
    }
}

impl ArLm {
    pub fn new(config: ArLmConfig) -> Result<Self, ModelError> {
        Ok(Self {
            params: init_params(&config)?,
            config,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ArLmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_invocations(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    /// Next-token log distributions after `<s>`, `<s> w1`, ... One
    /// invocation.
    pub fn next_token_log_probs(&self, sentence: &[WordId]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let tape = Tape::new();
        let (logits, _) = logits_graph(&self.config, &self.params, &tape, &[sentence], None)?;
        let v = self.config.vocab_size;
        tape.with_value(logits, |t| t.data().chunks(v).map(log_softmax_row).collect())
            .map_err(ModelError::from)
    }

    /// `sum_t log P(w_t | w_<t)` over `w1 .. wn </s>` in nats. One invocation.
    pub fn ar_score(&self, sentence: &[WordId]) -> Result<f64, ModelError> {
        let dists = self.next_token_log_probs(sentence)?;
        let (_, targets) = io_tokens(sentence, self.config.vocab_size);
        Ok(dists.iter().zip(&targets).map(|(d, &t)| d[t]).sum())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({"kind": "arlm", "config": self.config}),
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.meta["kind"] != "arlm" {
            return Err(ModelError::Checkpoint("not an autoregressive LM checkpoint".into()));
        }
        let config: ArLmConfig =
            serde_json::from_value(ckpt.meta["config"].clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let reference = init_params(&config)?;
        let mut params = ParamStore::new();
        for (name, t) in reference.iter() {
            let got = ckpt
                .tensors
                .by_name(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(ModelError::Checkpoint(format!("shape mismatch for {name}")));
            }
            params.add(name, got.clone())?;
        }
        Ok(Self {
            config,
            params,
            calls: AtomicU64::new(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ArTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                warmup_steps: 100,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Trains with token-level cross-entropy and returns the mean loss per epoch.
pub fn train_arlm(mut model: ArLm, config: ArTrainConfig, corpus: &[Vec<WordId>]) -> Result<(ArLm, Vec<f64>), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(config.adam, &model.params);
    let mut losses = Vec::with_capacity(config.epochs);
    let cfg = model.config;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_n(config.seed, &[epoch as u64])));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let sentences: Vec<&[WordId]> = chunk.iter().map(|&i| corpus[i].as_slice()).collect();
            let dropout = (cfg.dropout > 0.0).then_some(DropoutCtx {
                rate: cfg.dropout,
                seed: cfg.seed,
                step: adam.step,
            });
            let tape = Tape::new();
            let (logits, targets) = logits_graph(&cfg, &model.params, &tape, &sentences, dropout)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            total += tape.value(loss)?.item();
            let grads = tape.backward(loss)?.param_grads(&model.params);
            adam.update(&mut model.params, &grads)?;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("arlm epoch {} loss {mean:.4}", epoch + 1);
        losses.push(mean);
    }
    Ok((model, losses))
}
