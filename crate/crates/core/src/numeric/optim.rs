use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{contract, ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every trainable parameter, then clears all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let trainable: Vec<_> = store.ids().filter(|&id| !store.is_frozen(id)).collect();
        for &id in &trainable {
            if store.get(id).grad().is_none() {
                return Err(contract!("parameter {} has no gradient", store.name(id)));
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in trainable {
            let i = id.index();
            let t = store.get_mut(id);
            let grad = t.take_grad().expect("checked above");
            let m = self.first[i].get_or_insert_with(|| vec![0.0; grad.len()]);
            let v = self.second[i].get_or_insert_with(|| vec![0.0; grad.len()]);
            ensure!(
                m.len() == grad.len(),
                "moment buffer for {} does not match its parameter",
                i
            );
            for (((p, g), mi), vi) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 2,
            factor: 10.0,
        }
    }
}

/// Divides the learning rate by `factor` once the epoch loss has failed to
/// improve for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    best: f64,
    since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        PlateauScheduler {
            config,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Records an epoch loss and returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.since_improvement = 0;
            return lr;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.config.patience {
            self.since_improvement = 0;
            lr / self.config.factor
        } else {
            lr
        }
    }
}
