//! Adam and the step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::pipeline::config::TrainConfig;

/// Piecewise-constant schedule: the base rate multiplied by the decay
/// factor once per boundary reached.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.base_lr;
    for b in cfg.decay_boundaries() {
        if epoch as f64 >= b {
            lr *= cfg.decay_factor;
        }
    }
    lr
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    /// Zeroed moments shaped like `store`.
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                "length",
                format!(
                    "{} gradients and {} moments for {} parameters",
                    grads.len(),
                    self.m.len(),
                    store.len()
                ),
            ));
        }
        for (i, (t, g)) in store.tensors().iter().zip(grads).enumerate() {
            if g.len() != t.numel() || self.m[i].len() != t.numel() {
                return Err(Error::shape(
                    "adam_step",
                    "length",
                    format!("parameter {i}: {} gradient entries for {} values", g.len(), t.numel()),
                ));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
