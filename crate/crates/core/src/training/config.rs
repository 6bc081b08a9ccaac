use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization hyperparameters. Defaults are the full-scale schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_epochs: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_interval_epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Label smoothing ε; 0 gives one-hot targets.
    pub smoothing_epsilon: f64,
    pub seed: u64,
    pub num_classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_epochs: 95,
            base_lr: 0.05,
            lr_decay_factor: 0.1,
            lr_decay_interval_epochs: 30,
            weight_decay: 1e-4,
            momentum: 0.9,
            smoothing_epsilon: 0.1,
            seed: 0,
            num_classes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.smoothing_epsilon) {
            return bad("smoothing_epsilon must lie in [0, 1]");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be ≥ 2");
        }
        if self.lr_decay_interval_epochs == 0 {
            return bad("lr_decay_interval_epochs must be ≥ 1");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be finite and ≥ 0");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and ≥ 0");
        }
        Ok(())
    }
}

/// Step schedule: `base_lr · factor^⌊epoch / interval⌋`.
///
/// Computed as a division by `(1/factor)^steps`, which is exact for factors
/// like 0.1 and keeps decimal schedules free of accumulated rounding
/// (`0.05 · 0.1` is not `0.005` in binary, `0.05 / 10` is).
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = epoch / config.lr_decay_interval_epochs.max(1);
    config.base_lr / (1.0 / config.lr_decay_factor).powi(steps as i32)
}
