//! Lattice transformer training with deterministic shuffling, per-epoch
//! evaluation and resumable checkpoints.

use std::path::Path;

use ltlm_autodiff::{Adam, AdamConfig, Checkpoint, ParamStore, Tape};
use ltlm_core::seed::derive_seed_n;
use ltlm_core::{augment, oracle_path, topo_sort, Lattice, WordId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::DropoutCtx;
use crate::ltlm::{bce_loss, loss_graph, ArcBatch, LtLm, LtLmConfig};
use crate::metrics::{accuracy, roc_auc};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds batch shuffling; dropout uses the model seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                warmup_steps: 100,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// An augmented, sorted lattice with its oracle labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub lattice: Lattice,
    pub targets: Vec<u8>,
}

/// Augments a lattice if needed and makes sure it is topologically sorted.
pub fn prepare_lattice(lattice: &Lattice) -> Result<Lattice, ModelError> {
    if lattice.is_augmented() {
        if lattice.is_topologically_sorted() {
            Ok(lattice.clone())
        } else {
            Ok(topo_sort(lattice)?)
        }
    } else {
        Ok(augment(lattice)?)
    }
}

impl TrainingExample {
    pub fn new(lattice: Lattice, targets: Vec<u8>) -> Result<Self, ModelError> {
        if targets.len() != lattice.arcs.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} targets for {} arcs in {}",
                targets.len(),
                lattice.arcs.len(),
                lattice.utterance_id
            )));
        }
        Ok(Self { lattice, targets })
    }

    /// Labels the augmented lattice with an oracle path against `reference`.
    pub fn from_reference<R: Rng + ?Sized>(lattice: &Lattice, reference: &[WordId], rng: &mut R) -> Result<Self, ModelError> {
        let lattice = prepare_lattice(lattice)?;
        let targets = oracle_path(&lattice, reference, rng)?.labels;
        Ok(Self { lattice, targets })
    }
}

fn batch_of(examples: &[&TrainingExample]) -> ArcBatch {
    let lats: Vec<&Lattice> = examples.iter().map(|e| &e.lattice).collect();
    let targets: Vec<&[u8]> = examples.iter().map(|e| e.targets.as_slice()).collect();
    ArcBatch::from_lattices(&lats, Some(&targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    /// `None` when only one class occurs.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub arcs: usize,
    /// Lattices whose every oracle arc outscores every other arc.
    pub separated_fraction: f64,
}

/// Eval-mode loss and arc-classification metrics.
pub fn evaluate(model: &LtLm, data: &[TrainingExample], batch_size: usize) -> Result<EvalReport, ModelError> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut separated = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        let batch = batch_of(&refs);
        let p = model.forward_logits(&batch)?;
        for (b, ex) in chunk.iter().enumerate() {
            let row: Vec<f64> = (0..ex.targets.len())
                .map(|a| 1.0 / (1.0 + (-p[b * batch.max_arcs + a]).exp()))
                .collect();
            let min_pos = row.iter().zip(&ex.targets).filter(|(_, &t)| t == 1).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
            let max_neg = row.iter().zip(&ex.targets).filter(|(_, &t)| t == 0).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            if min_pos > max_neg {
                separated += 1;
            }
            probs.extend(row);
            labels.extend(ex.targets.iter().map(|&t| t == 1));
        }
    }
    let targets: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    Ok(EvalReport {
        loss: bce_loss(&probs, &targets, &vec![true; probs.len()]),
        auc: roc_auc(&probs, &labels),
        accuracy: accuracy(&probs, &labels),
        arcs: probs.len(),
        separated_fraction: if data.is_empty() { 0.0 } else { separated as f64 / data.len() as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    batch_in_epoch: usize,
    epoch_loss_sum: f64,
}

/// Stepwise trainer. The whole state, including the position inside the
/// current epoch, fits in a checkpoint.
#[derive(Debug)]
pub struct Trainer<'a> {
    model: LtLm,
    adam: Adam,
    config: TrainConfig,
    data: &'a [TrainingExample],
    order: Vec<usize>,
    progress: Progress,
}

impl<'a> Trainer<'a> {
    pub fn new(model: LtLm, config: TrainConfig, data: &'a [TrainingExample]) -> Result<Self, ModelError> {
        let adam = Adam::new(config.adam, model.params());
        Self::assemble(
            model,
            adam,
            config,
            data,
            Progress {
                epoch: 0,
                batch_in_epoch: 0,
                epoch_loss_sum: 0.0,
            },
        )
    }

    fn assemble(model: LtLm, adam: Adam, config: TrainConfig, data: &'a [TrainingExample], progress: Progress) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if config.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        let max = model.config().max_positions;
        for ex in data {
            if ex.lattice.num_states > max {
                return Err(ModelError::PositionOverflow {
                    state: ex.lattice.num_states - 1,
                    max,
                });
            }
        }
        let mut t = Self {
            model,
            adam,
            config,
            data,
            order: Vec::new(),
            progress,
        };
        t.order = t.epoch_order(t.progress.epoch);
        Ok(t)
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_n(self.config.seed, &[epoch as u64])));
        order
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    pub fn model(&self) -> &LtLm {
        &self.model
    }

    pub fn into_model(self) -> LtLm {
        self.model
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.progress.epoch
    }

    pub fn finished(&self) -> bool {
        self.progress.epoch >= self.config.epochs
    }

    /// Trains on the next batch and returns its loss, or `None` after the
    /// last epoch. When the batch closes an epoch, the mean epoch loss is
    /// returned as the second element.
    pub fn step(&mut self) -> Result<Option<(f64, Option<f64>)>, ModelError> {
        if self.finished() {
            return Ok(None);
        }
        let bs = self.config.batch_size;
        let start = self.progress.batch_in_epoch * bs;
        let end = (start + bs).min(self.data.len());
        let examples: Vec<&TrainingExample> = self.order[start..end].iter().map(|&i| &self.data[i]).collect();
        let batch = batch_of(&examples);
        let cfg = *self.model.config();
        let dropout = (cfg.dropout > 0.0).then_some(DropoutCtx {
            rate: cfg.dropout,
            seed: cfg.seed,
            step: self.adam.step,
        });
        let tape = Tape::new();
        let loss = loss_graph(&cfg, self.model.params(), &tape, &batch, dropout)?;
        let value = tape.value(loss)?.item();
        let grads = tape.backward(loss)?.param_grads(self.model.params());
        self.adam.update(self.model.params_mut(), &grads)?;

        self.progress.epoch_loss_sum += value;
        self.progress.batch_in_epoch += 1;
        let mut epoch_loss = None;
        if self.progress.batch_in_epoch == self.batches_per_epoch() {
            epoch_loss = Some(self.progress.epoch_loss_sum / self.batches_per_epoch() as f64);
            self.progress = Progress {
                epoch: self.progress.epoch + 1,
                batch_in_epoch: 0,
                epoch_loss_sum: 0.0,
            };
            self.order = self.epoch_order(self.progress.epoch);
        }
        Ok(Some((value, epoch_loss)))
    }

    /// Runs to the end of the current epoch and returns its mean loss.
    pub fn run_epoch(&mut self) -> Result<Option<f64>, ModelError> {
        while let Some((_, done)) = self.step()? {
            if done.is_some() {
                return Ok(done);
            }
        }
        Ok(None)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let mut tensors = self.model.params().clone();
        self.adam.export(self.model.params(), &mut tensors)?;
        Ok(Checkpoint {
            meta: serde_json::json!({
                "kind": "ltlm-train",
                "config": self.model.config(),
                "train": self.config,
                "adam_step": self.adam.step,
                "progress": self.progress,
            }),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.checkpoint()?.save(path)?)
    }

    /// Restores a trainer from [`Trainer::checkpoint`] output over the same data.
    pub fn resume(ckpt: &Checkpoint, data: &'a [TrainingExample]) -> Result<Self, ModelError> {
        let bad = |e: serde_json::Error| ModelError::Checkpoint(e.to_string());
        if ckpt.meta["kind"] != "ltlm-train" {
            return Err(ModelError::Checkpoint("not a training checkpoint".into()));
        }
        let config: LtLmConfig = serde_json::from_value(ckpt.meta["config"].clone()).map_err(bad)?;
        let train: TrainConfig = serde_json::from_value(ckpt.meta["train"].clone()).map_err(bad)?;
        let progress: Progress = serde_json::from_value(ckpt.meta["progress"].clone()).map_err(bad)?;
        let step = ckpt.meta["adam_step"]
            .as_u64()
            .ok_or_else(|| ModelError::Checkpoint("missing adam_step".into()))?;
        let mut params = ParamStore::new();
        for (name, t) in ckpt.tensors.iter() {
            if !name.starts_with("adam.") {
                params.add(name, t.clone())?;
            }
        }
        let model = LtLm::from_params(config, params)?;
        let adam = Adam::restore(train.adam, step, model.params(), ckpt)?;
        Self::assemble(model, adam, train, data, progress)
    }
}

/// Trains for `config.epochs` epochs, evaluating on `heldout` and writing
/// `epoch-<n>.ckpt` into `checkpoint_dir` after each epoch.
pub fn train(
    model: LtLm,
    config: TrainConfig,
    data: &[TrainingExample],
    heldout: &[TrainingExample],
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(LtLm, Vec<EpochReport>), ModelError> {
    let mut trainer = Trainer::new(model, config, data)?;
    let mut reports = Vec::new();
    while let Some(loss) = trainer.run_epoch()? {
        let heldout_report = if heldout.is_empty() {
            None
        } else {
            Some(evaluate(trainer.model(), heldout, config.batch_size)?)
        };
        let report = EpochReport {
            epoch: trainer.epoch(),
            train_loss: loss,
            heldout: heldout_report,
        };
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            trainer.save(&dir.join(format!("epoch-{}.ckpt", report.epoch)))?;
        }
        on_epoch(&report);
        reports.push(report);
    }
    Ok((trainer.into_model(), reports))
}
