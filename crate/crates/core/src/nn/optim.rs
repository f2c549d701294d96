use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Cosine annealing from `lr_start` at epoch 0 to `lr_end` at the final epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_epochs: usize,
}

impl CosineSchedule {
    pub fn new(lr_start: f64, lr_end: f64, total_epochs: usize) -> Self {
        Self { lr_start, lr_end, total_epochs }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if self.total_epochs <= 1 {
            return self.lr_start;
        }
        let last = (self.total_epochs - 1) as f64;
        let progress = (epoch as f64).min(last) / last;
        self.lr_end + (self.lr_start - self.lr_end) * (1.0 + (PI * progress).cos()) / 2.0
    }
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self::new(0.01, 0.0001, 55)
    }
}

/// Adam state: one first/second moment buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub schedule: CosineSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epoch: usize,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model, schedule: CosineSchedule) -> Self {
        let sizes: Vec<usize> = model
            .layers()
            .flat_map(|l| [l.weight.data().len(), l.bias.len()])
            .collect();
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epoch: 0,
            steps: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.epoch)
    }

    /// One Adam update at the scheduled learning rate of the current epoch.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradients at optimizer step {} (epoch {})",
                self.steps, self.epoch
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let lr = self.lr();
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        let params = model.layers_mut().flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()]);
        let gs = grads.layers().flat_map(|l| [l.weight.data(), l.bias.as_slice()]);
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
