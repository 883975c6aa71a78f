//! Adam with bias correction and a linear warmup schedule.

use serde::{Deserialize, Serialize};

use crate::params::{ParamStore, Checkpoint};
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps of linear warmup from 0 to `lr`; constant afterwards.
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

impl AdamConfig {
    /// Learning rate used at 1-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `grads` must be aligned with `params`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), AutodiffError> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                detail: format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    detail: format!("gradient {:?} for {} {:?}", g.shape(), params.name(id), params.get(id).shape()),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let lr = c.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, id) in params.ids().enumerate() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (j, &gj) in grads[k].data().iter().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors (`adam.m.<param>`, `adam.v.<param>`).
    pub fn export(&self, params: &ParamStore, into: &mut ParamStore) -> Result<(), AutodiffError> {
        for (k, id) in params.ids().enumerate() {
            into.add(&format!("adam.m.{}", params.name(id)), self.m[k].clone())?;
            into.add(&format!("adam.v.{}", params.name(id)), self.v[k].clone())?;
        }
        Ok(())
    }

    /// Inverse of [`Adam::export`].
    pub fn restore(config: AdamConfig, step: u64, params: &ParamStore, ckpt: &Checkpoint) -> Result<Self, AutodiffError> {
        let mut adam = Self::new(config, params);
        adam.step = step;
        for (k, id) in params.ids().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut adam.m[k]), ("adam.v.", &mut adam.v[k])] {
                let name = format!("{prefix}{}", params.name(id));
                let t = ckpt
                    .tensors
                    .by_name(&name)
                    .ok_or_else(|| AutodiffError::Checkpoint(format!("missing {name}")))?;
                if t.shape() != params.get(id).shape() {
                    return Err(AutodiffError::Checkpoint(format!("shape mismatch for {name}")));
                }
                *slot = t.clone();
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &s);
        for _ in 0..5 {
            adam.update(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(s.get(crate::ParamId(0)).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &s);
        adam.update(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        let moved = 1.0 - s.get(crate::ParamId(0)).item();
        assert!((moved - 0.1).abs() < 1e-6, "{moved}");
    }

    #[test]
    fn warmup_is_linear() {
        let c = AdamConfig { lr: 1.0, warmup_steps: 4, ..Default::default() };
        let lrs: Vec<f64> = (1..=6).map(|s| c.lr_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        assert!(adam.update(&mut s, &[Tensor::zeros(&[2])]).is_err());
        assert!(adam.update(&mut s, &[]).is_err());
    }
}
