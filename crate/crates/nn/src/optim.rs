use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// SGD hyper-parameters and run length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err("learning_rate must be positive; momentum and weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Cosine-decayed learning rate, reaching 0 at `epoch == epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.learning_rate;
        }
        let frac = epoch.min(self.epochs) as f64 / self.epochs as f64;
        self.learning_rate * 0.5 * (1.0 + (PI * frac).cos())
    }
}

/// Momentum SGD with L2 weight decay folded into the velocity.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// `v <- m v + g + wd θ`, `θ <- θ - lr(epoch) v`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], cfg: &TrainConfig, epoch: usize) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let lr = cfg.lr_at(epoch);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            assert_eq!(p.shape(), g.shape());
            for ((theta, grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vel = cfg.momentum * *vel + grad + cfg.weight_decay * *theta;
                *theta -= lr * *vel;
            }
        }
    }
}
