//! Pre-norm transformer encoder blocks shared by both models.

use ltlm_autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use ltlm_core::seed::derive_seed_n;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dimensions of one encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

/// Dropout settings for a training forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutCtx {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
}

impl DropoutCtx {
    fn apply(&self, tape: &Tape, x: Var, layer: usize, site: u64) -> Result<Var, AutodiffError> {
        let seed = derive_seed_n(self.seed, &[layer as u64, site, self.step]);
        tape.dropout(x, self.rate, seed)
    }
}

/// Contiguous rows of the packed activation matrix that attend to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

pub fn segments_from_lengths(lengths: &[usize]) -> Vec<Segment> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&len| {
            let s = Segment { start, len };
            start += len;
            s
        })
        .collect()
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, &[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Adds the parameters of block `prefix` to `store`.
pub fn init_block(store: &mut ParamStore, prefix: &str, dims: BlockDims, rng: &mut ChaCha8Rng) -> Result<(), AutodiffError> {
    let d = dims.d_model;
    let f = dims.ff_dim;
    store.add(&format!("{prefix}.ln1.gamma"), Tensor::filled(&[1, d], 1.0))?;
    store.add(&format!("{prefix}.ln1.beta"), Tensor::zeros(&[1, d]))?;
    store.add(&format!("{prefix}.attn.wq"), xavier(rng, d, d))?;
    store.add(&format!("{prefix}.attn.bq"), Tensor::zeros(&[1, d]))?;
    store.add(&format!("{prefix}.attn.wk"), xavier(rng, d, d))?;
    store.add(&format!("{prefix}.attn.wv"), xavier(rng, d, d))?;
    store.add(&format!("{prefix}.attn.bv"), Tensor::zeros(&[1, d]))?;
    store.add(&format!("{prefix}.attn.wo"), xavier(rng, d, d))?;
    store.add(&format!("{prefix}.attn.bo"), Tensor::zeros(&[1, d]))?;
    store.add(&format!("{prefix}.ln2.gamma"), Tensor::filled(&[1, d], 1.0))?;
    store.add(&format!("{prefix}.ln2.beta"), Tensor::zeros(&[1, d]))?;
    store.add(&format!("{prefix}.ff.w1"), xavier(rng, d, f))?;
    store.add(&format!("{prefix}.ff.b1"), Tensor::zeros(&[1, f]))?;
    store.add(&format!("{prefix}.ff.w2"), xavier(rng, f, d))?;
    store.add(&format!("{prefix}.ff.b2"), Tensor::zeros(&[1, d]))?;
    Ok(())
}

/// Looks up a parameter by name and places it on the tape.
pub fn p(tape: &Tape, store: &ParamStore, name: &str) -> Result<Var, AutodiffError> {
    let id = store
        .id(name)
        .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {name}")))?;
    tape.param(store, id)
}

fn attention_mask(len: usize, causal: bool) -> Vec<bool> {
    (0..len * len).map(|i| !causal || i % len <= i / len).collect()
}

/// Multi-head self-attention restricted to each segment.
pub fn self_attention(
    tape: &Tape,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    segments: &[Segment],
    dims: BlockDims,
    causal: bool,
) -> Result<Var, AutodiffError> {
    let wq = p(tape, store, &format!("{prefix}.attn.wq"))?;
    let bq = p(tape, store, &format!("{prefix}.attn.bq"))?;
    let wk = p(tape, store, &format!("{prefix}.attn.wk"))?;
    let wv = p(tape, store, &format!("{prefix}.attn.wv"))?;
    let bv = p(tape, store, &format!("{prefix}.attn.bv"))?;
    let wo = p(tape, store, &format!("{prefix}.attn.wo"))?;
    let bo = p(tape, store, &format!("{prefix}.attn.bo"))?;
    let q = tape.add_row(tape.matmul(h, wq)?, bq)?;
    let k = tape.matmul(h, wk)?;
    let v = tape.add_row(tape.matmul(h, wv)?, bv)?;
    let dh = dims.d_model / dims.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut rows = Vec::with_capacity(segments.len());
    for seg in segments {
        let mask = attention_mask(seg.len, causal);
        let mut heads = Vec::with_capacity(dims.heads);
        for hd in 0..dims.heads {
            let qh = tape.slice(q, seg.start, seg.len, hd * dh, dh)?;
            let kh = tape.slice(k, seg.start, seg.len, hd * dh, dh)?;
            let vh = tape.slice(v, seg.start, seg.len, hd * dh, dh)?;
            let scores = tape.scale(tape.matmul_nt(qh, kh)?, scale)?;
            let weights = tape.masked_softmax(scores, &mask)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        rows.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
    }
    let merged = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
    tape.add_row(tape.matmul(merged, wo)?, bo)
}

/// One pre-norm block: `x + Attn(LN(x))`, then `x + FF(LN(x))`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    tape: &Tape,
    store: &ParamStore,
    prefix: &str,
    layer: usize,
    x: Var,
    segments: &[Segment],
    dims: BlockDims,
    causal: bool,
    dropout: Option<DropoutCtx>,
) -> Result<Var, AutodiffError> {
    let g1 = p(tape, store, &format!("{prefix}.ln1.gamma"))?;
    let b1 = p(tape, store, &format!("{prefix}.ln1.beta"))?;
    let h = tape.layer_norm(x, g1, b1)?;
    let mut a = self_attention(tape, store, prefix, h, segments, dims, causal)?;
    if let Some(d) = dropout {
        a = d.apply(tape, a, layer, 0)?;
    }
    let x = tape.add(x, a)?;
    let g2 = p(tape, store, &format!("{prefix}.ln2.gamma"))?;
    let b2 = p(tape, store, &format!("{prefix}.ln2.beta"))?;
    let h = tape.layer_norm(x, g2, b2)?;
    let w1 = p(tape, store, &format!("{prefix}.ff.w1"))?;
    let fb1 = p(tape, store, &format!("{prefix}.ff.b1"))?;
    let w2 = p(tape, store, &format!("{prefix}.ff.w2"))?;
    let fb2 = p(tape, store, &format!("{prefix}.ff.b2"))?;
    let f = tape.relu(tape.add_row(tape.matmul(h, w1)?, fb1)?)?;
    let mut f = tape.add_row(tape.matmul(f, w2)?, fb2)?;
    if let Some(d) = dropout {
        f = d.apply(tape, f, layer, 1)?;
    }
    tape.add(x, f)
}
