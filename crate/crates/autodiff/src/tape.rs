//! Reverse-mode tape. Every op appends a node holding its value and what the
//! backward pass needs; nodes are created in topological order, so backward
//! is a single reverse sweep.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::AutodiffError;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Rows whose variance is below this are normalized to zero.
pub const LAYER_NORM_MIN_VAR: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Gather { table: usize, ids: Vec<usize> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    MaskedSoftmax { x: usize },
    Relu(usize),
    Sigmoid(usize),
    Dropout { x: usize, mask: Vec<f64> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Slice { x: usize, r0: usize, c0: usize },
    Sum(usize),
    Mean(usize),
    Bce { x: usize, targets: Vec<f64>, mask: Vec<bool>, count: usize },
    CrossEntropy { x: usize, targets: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Gather { .. } => "gather",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Dropout { .. } => "dropout",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Bce { .. } => "bce_with_logits",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(ParamId, usize)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn idx(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(AutodiffError::NonFiniteValue { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: nodes.len() - 1,
        })
    }

    pub fn value(&self, v: Var) -> Result<Tensor, AutodiffError> {
        let i = self.idx(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn with_value<T>(&self, v: Var, f: impl FnOnce(&Tensor) -> T) -> Result<T, AutodiffError> {
        let i = self.idx(v)?;
        Ok(f(&self.nodes.borrow()[i].value))
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>, AutodiffError> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    pub fn leaf(&self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push(value, Op::Leaf)
    }

    /// Places a trainable parameter on the tape. The same parameter may be
    /// placed several times; its gradients are summed.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Result<Var, AutodiffError> {
        let v = self.push(store.get(id).clone(), Op::Leaf)?;
        self.params.borrow_mut().push((id, v.idx));
        Ok(v)
    }

    fn dims2(&self, i: usize) -> (usize, usize) {
        let n = self.nodes.borrow();
        (n[i].value.rows(), n[i].value.cols())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let ((m, k), (k2, n)) = (self.dims2(ia), self.dims2(ib));
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.nodes.borrow();
            gemm_nn(nodes[ia].value.data(), nodes[ib].value.data(), &mut out, m, k, n);
        }
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(ia, ib))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let ((m, k), (n, k2)) = (self.dims2(ia), self.dims2(ib));
        if k != k2 {
            return Err(mismatch("matmul_nt", format!("[{m}x{k}] * [{n}x{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.nodes.borrow();
            gemm_nt(nodes[ia].value.data(), nodes[ib].value.data(), &mut out, m, k, n);
        }
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(ia, ib))
    }

    fn zip_same(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor), AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[ia].value, &nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t) = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(ia, ib))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(ia, ib))
    }

    /// Adds a row vector (`cols` values) to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(row)?);
        let t = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[ia].value, &nodes[ib].value);
            let n = ta.cols();
            if tb.len() != n {
                return Err(mismatch("add_row", format!("{:?} + row {:?}", ta.shape(), tb.shape())));
            }
            let mut data = ta.data().to_vec();
            for chunk in data.chunks_mut(n.max(1)) {
                for (x, &b) in chunk.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        self.push(t, Op::AddRow(ia, ib))
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let t = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[ia].value;
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * s).collect())?
        };
        self.push(t, Op::Scale(ia, s))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let it = self.idx(table)?;
        let t = {
            let nodes = self.nodes.borrow();
            let tt = &nodes[it].value;
            let (rows, d) = (tt.rows(), tt.cols());
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= rows {
                    return Err(AutodiffError::IndexOutOfRange { index: id, len: rows });
                }
                data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
            }
            Tensor::matrix(ids.len(), d, data)?
        };
        self.push(t, Op::Gather { table: it, ids: ids.to_vec() })
    }

    /// Normalizes each row, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (t, xhat, rstd) = {
            let nodes = self.nodes.borrow();
            let (tx, tg, tb) = (&nodes[ix].value, &nodes[ig].value, &nodes[ib].value);
            let (m, n) = (tx.rows(), tx.cols());
            if tg.len() != n || tb.len() != n {
                return Err(mismatch("layer_norm", format!("{:?} with affine of {}", tx.shape(), tg.len())));
            }
            let mut xhat = vec![0.0; m * n];
            let mut rstd = vec![0.0; m];
            let mut out = vec![0.0; m * n];
            for r in 0..m {
                let row = &tx.data()[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                if var >= LAYER_NORM_MIN_VAR {
                    let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    rstd[r] = rs;
                    for c in 0..n {
                        xhat[r * n + c] = (row[c] - mean) * rs;
                    }
                }
                for c in 0..n {
                    out[r * n + c] = tg.data()[c] * xhat[r * n + c] + tb.data()[c];
                }
            }
            (Tensor::new(tx.shape().to_vec(), out)?, xhat, rstd)
        };
        self.push(t, Op::LayerNorm { x: ix, gamma: ig, beta: ib, xhat, rstd })
    }

    /// Row-wise softmax over the positions where `mask` is true. Masked
    /// positions get weight 0; a fully masked row is all zeros.
    pub fn masked_softmax(&self, x: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let t = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[ix].value;
            if mask.len() != tx.len() {
                return Err(mismatch("masked_softmax", format!("mask of {} for {:?}", mask.len(), tx.shape())));
            }
            let (m, n) = (tx.rows(), tx.cols());
            let mut out = vec![0.0; m * n];
            for r in 0..m {
                let row = &tx.data()[r * n..(r + 1) * n];
                let keep = &mask[r * n..(r + 1) * n];
                let max = row
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for c in 0..n {
                    if keep[c] {
                        let e = (row[c] - max).exp();
                        out[r * n + c] = e;
                        z += e;
                    }
                }
                for v in &mut out[r * n..(r + 1) * n] {
                    *v /= z;
                }
            }
            Tensor::new(tx.shape().to_vec(), out)?
        };
        self.push(t, Op::MaskedSoftmax { x: ix })
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Result<(usize, Tensor), AutodiffError> {
        let ix = self.idx(x)?;
        let nodes = self.nodes.borrow();
        let tx = &nodes[ix].value;
        Ok((ix, Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect())?))
    }

    pub fn relu(&self, x: Var) -> Result<Var, AutodiffError> {
        let (ix, t) = self.map(x, |v| v.max(0.0))?;
        self.push(t, Op::Relu(ix))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var, AutodiffError> {
        let (ix, t) = self.map(x, sigmoid)?;
        self.push(t, Op::Sigmoid(ix))
    }

    /// Inverted dropout with a mask drawn from a ChaCha8 stream seeded by
    /// `seed`. Returns `x` unchanged when `p` is zero.
    pub fn dropout(&self, x: Var, p: f64, seed: u64) -> Result<Var, AutodiffError> {
        if p <= 0.0 {
            self.idx(x)?;
            return Ok(x);
        }
        let ix = self.idx(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let (t, mask) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[ix].value;
            let mask: Vec<f64> = (0..tx.len())
                .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
                .collect();
            let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (Tensor::new(tx.shape().to_vec(), data)?, mask)
        };
        self.push(t, Op::Dropout { x: ix, mask })
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_, _>>()?;
        let t = {
            let nodes = self.nodes.borrow();
            let m = ids.first().map_or(0, |&i| nodes[i].value.rows());
            if ids.iter().any(|&i| nodes[i].value.rows() != m) {
                return Err(mismatch("concat_cols", "row counts differ".into()));
            }
            let total: usize = ids.iter().map(|&i| nodes[i].value.cols()).sum();
            let mut data = Vec::with_capacity(m * total);
            for r in 0..m {
                for &i in &ids {
                    let v = &nodes[i].value;
                    let n = v.cols();
                    data.extend_from_slice(&v.data()[r * n..(r + 1) * n]);
                }
            }
            Tensor::matrix(m, total, data)?
        };
        self.push(t, Op::ConcatCols(ids))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_, _>>()?;
        let t = {
            let nodes = self.nodes.borrow();
            let n = ids.first().map_or(0, |&i| nodes[i].value.cols());
            if ids.iter().any(|&i| nodes[i].value.cols() != n) {
                return Err(mismatch("concat_rows", "column counts differ".into()));
            }
            let mut data = Vec::new();
            let mut m = 0;
            for &i in &ids {
                data.extend_from_slice(nodes[i].value.data());
                m += nodes[i].value.rows();
            }
            Tensor::matrix(m, n, data)?
        };
        self.push(t, Op::ConcatRows(ids))
    }

    /// The `rows x cols` block starting at `(r0, c0)`.
    pub fn slice(&self, x: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let t = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[ix].value;
            let (m, n) = (tx.rows(), tx.cols());
            if r0 + rows > m || c0 + cols > n {
                return Err(mismatch("slice", format!("[{r0}+{rows}, {c0}+{cols}] of [{m}x{n}]")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in r0..r0 + rows {
                data.extend_from_slice(&tx.data()[r * n + c0..r * n + c0 + cols]);
            }
            Tensor::matrix(rows, cols, data)?
        };
        self.push(t, Op::Slice { x: ix, r0, c0 })
    }

    pub fn sum(&self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let s = self.nodes.borrow()[ix].value.sum();
        self.push(Tensor::scalar(s), Op::Sum(ix))
    }

    pub fn mean(&self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let s = {
            let nodes = self.nodes.borrow();
            let v = &nodes[ix].value;
            if v.is_empty() {
                0.0
            } else {
                v.sum() / v.len() as f64
            }
        };
        self.push(Tensor::scalar(s), Op::Mean(ix))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets` over
    /// the positions where `mask` is true; 0 when nothing is selected.
    pub fn bce_with_logits(&self, logits: Var, targets: &[f64], mask: &[bool]) -> Result<Var, AutodiffError> {
        let ix = self.idx(logits)?;
        let (loss, count) = {
            let nodes = self.nodes.borrow();
            let x = nodes[ix].value.data();
            if targets.len() != x.len() || mask.len() != x.len() {
                return Err(mismatch("bce_with_logits", format!("{} logits, {} targets, {} mask", x.len(), targets.len(), mask.len())));
            }
            let mut total = 0.0;
            let mut count = 0;
            for i in 0..x.len() {
                if mask[i] {
                    let (v, t) = (x[i], targets[i]);
                    total += v.max(0.0) - v * t + (-v.abs()).exp().ln_1p();
                    count += 1;
                }
            }
            (if count == 0 { 0.0 } else { total / count as f64 }, count)
        };
        self.push(
            Tensor::scalar(loss),
            Op::Bce { x: ix, targets: targets.to_vec(), mask: mask.to_vec(), count },
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let ix = self.idx(logits)?;
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ix].value;
            let (m, n) = (t.rows(), t.cols());
            if targets.len() != m {
                return Err(mismatch("cross_entropy", format!("{} targets for {m} rows", targets.len())));
            }
            let mut probs = vec![0.0; m * n];
            let mut total = 0.0;
            for r in 0..m {
                if targets[r] >= n {
                    return Err(AutodiffError::IndexOutOfRange { index: targets[r], len: n });
                }
                let row = &t.data()[r * n..(r + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + z.ln();
                total += lse - row[targets[r]];
                for c in 0..n {
                    probs[r * n + c] = (row[c] - lse).exp();
                }
            }
            (if m == 0 { 0.0 } else { total / m as f64 }, probs)
        };
        self.push(Tensor::scalar(loss), Op::CrossEntropy { x: ix, targets: targets.to_vec(), probs })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if loss.tape != self.id {
            return Err(AutodiffError::DisconnectedLoss);
        }
        let nodes = self.nodes.borrow();
        if loss.idx >= nodes.len() {
            return Err(AutodiffError::DisconnectedLoss);
        }
        if nodes[loss.idx].value.len() != 1 {
            return Err(AutodiffError::NotScalar(nodes[loss.idx].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::filled(nodes[loss.idx].value.shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
            match &mut grads[i] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        let like = |i: usize, data: Vec<f64>| Tensor::new(nodes[i].value.shape().to_vec(), data).expect("shape of input");

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let gd = g.data();
            match &nodes[i].op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
                    let n = nodes[b].value.cols();
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(gd, nodes[b].value.data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(nodes[a].value.data(), gd, &mut gb, m, k, n);
                    acc(&mut grads, a, like(a, ga));
                    acc(&mut grads, b, like(b, gb));
                }
                &Op::MatMulNt(a, b) => {
                    let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
                    let n = nodes[b].value.rows();
                    let mut ga = vec![0.0; m * k];
                    gemm_nn(gd, nodes[b].value.data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; n * k];
                    gemm_tn(gd, nodes[a].value.data(), &mut gb, m, n, k);
                    acc(&mut grads, a, like(a, ga));
                    acc(&mut grads, b, like(b, gb));
                }
                &Op::Add(a, b) => {
                    acc(&mut grads, a, like(a, gd.to_vec()));
                    acc(&mut grads, b, like(b, gd.to_vec()));
                }
                &Op::Mul(a, b) => {
                    let ga = gd.iter().zip(nodes[b].value.data()).map(|(g, y)| g * y).collect();
                    let gb = gd.iter().zip(nodes[a].value.data()).map(|(g, x)| g * x).collect();
                    acc(&mut grads, a, like(a, ga));
                    acc(&mut grads, b, like(b, gb));
                }
                &Op::AddRow(a, b) => {
                    let n = nodes[b].value.len();
                    let mut gb = vec![0.0; n];
                    for chunk in gd.chunks(n.max(1)) {
                        for (s, v) in gb.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, a, like(a, gd.to_vec()));
                    acc(&mut grads, b, like(b, gb));
                }
                &Op::Scale(a, s) => {
                    acc(&mut grads, a, like(a, gd.iter().map(|v| v * s).collect()));
                }
                Op::Gather { table, ids } => {
                    let d = nodes[*table].value.cols();
                    let mut gt = vec![0.0; nodes[*table].value.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += gd[r * d + c];
                        }
                    }
                    acc(&mut grads, *table, like(*table, gt));
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let n = nodes[*gamma].value.len();
                    let m = rstd.len();
                    let gam = nodes[*gamma].value.data();
                    let mut gx = vec![0.0; m * n];
                    let mut gg = vec![0.0; n];
                    let mut gbeta = vec![0.0; n];
                    for r in 0..m {
                        let row_g = &gd[r * n..(r + 1) * n];
                        let row_h = &xhat[r * n..(r + 1) * n];
                        let mut mean_gh = 0.0;
                        let mut mean_ghx = 0.0;
                        for c in 0..n {
                            gg[c] += row_g[c] * row_h[c];
                            gbeta[c] += row_g[c];
                            let gh = row_g[c] * gam[c];
                            mean_gh += gh;
                            mean_ghx += gh * row_h[c];
                        }
                        if rstd[r] == 0.0 {
                            continue;
                        }
                        mean_gh /= n as f64;
                        mean_ghx /= n as f64;
                        for c in 0..n {
                            let gh = row_g[c] * gam[c];
                            gx[r * n + c] = rstd[r] * (gh - mean_gh - row_h[c] * mean_ghx);
                        }
                    }
                    acc(&mut grads, *x, like(*x, gx));
                    acc(&mut grads, *gamma, like(*gamma, gg));
                    acc(&mut grads, *beta, like(*beta, gbeta));
                }
                &Op::MaskedSoftmax { x } => {
                    let y = nodes[i].value.data();
                    let n = nodes[i].value.cols();
                    let mut gx = vec![0.0; y.len()];
                    for r in 0..nodes[i].value.rows() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gd[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, x, like(x, gx));
                }
                &Op::Relu(x) => {
                    let gx = gd
                        .iter()
                        .zip(nodes[x].value.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, x, like(x, gx));
                }
                &Op::Sigmoid(x) => {
                    let gx = gd
                        .iter()
                        .zip(nodes[i].value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    acc(&mut grads, x, like(x, gx));
                }
                Op::Dropout { x, mask } => {
                    let gx = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::ConcatCols(ids) => {
                    let total = nodes[i].value.cols();
                    let m = nodes[i].value.rows();
                    let mut offset = 0;
                    for &p in ids {
                        let n = nodes[p].value.cols();
                        let mut gp = Vec::with_capacity(m * n);
                        for r in 0..m {
                            gp.extend_from_slice(&gd[r * total + offset..r * total + offset + n]);
                        }
                        acc(&mut grads, p, like(p, gp));
                        offset += n;
                    }
                }
                Op::ConcatRows(ids) => {
                    let mut offset = 0;
                    for &p in ids {
                        let len = nodes[p].value.len();
                        acc(&mut grads, p, like(p, gd[offset..offset + len].to_vec()));
                        offset += len;
                    }
                }
                &Op::Slice { x, r0, c0 } => {
                    let n = nodes[x].value.cols();
                    let (rows, cols) = (nodes[i].value.rows(), nodes[i].value.cols());
                    let mut gx = vec![0.0; nodes[x].value.len()];
                    for r in 0..rows {
                        let dst = (r0 + r) * n + c0;
                        gx[dst..dst + cols].copy_from_slice(&gd[r * cols..(r + 1) * cols]);
                    }
                    acc(&mut grads, x, like(x, gx));
                }
                &Op::Sum(x) => {
                    acc(&mut grads, x, like(x, vec![gd[0]; nodes[x].value.len()]));
                }
                &Op::Mean(x) => {
                    let len = nodes[x].value.len();
                    let v = if len == 0 { 0.0 } else { gd[0] / len as f64 };
                    acc(&mut grads, x, like(x, vec![v; len]));
                }
                Op::Bce { x, targets, mask, count } => {
                    let xs = nodes[*x].value.data();
                    let gx = (0..xs.len())
                        .map(|j| {
                            if mask[j] {
                                gd[0] * (sigmoid(xs[j]) - targets[j]) / *count as f64
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc(&mut grads, *x, like(*x, gx));
                }
                Op::CrossEntropy { x, targets, probs } => {
                    let n = nodes[*x].value.cols();
                    let m = targets.len();
                    let mut gx: Vec<f64> = probs.iter().map(|p| gd[0] * p / m as f64).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        gx[r * n + t] -= gd[0] / m as f64;
                    }
                    acc(&mut grads, *x, like(*x, gx));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when the loss does not depend
    /// on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`, summed over all placements
    /// and zero for parameters the loss does not touch.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(pid, idx) in &self.params {
            if let Some(Some(g)) = self.grads.get(idx) {
                out[pid.0].add_assign(g);
            }
        }
        out
    }
}
