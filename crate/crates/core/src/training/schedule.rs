use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs from which the rate is multiplied by `decay_factor` once more.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 600,
            decay_epochs: vec![200, 500],
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor must be in (0, 1], got {}", self.decay_factor)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (zero-based).
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    config.learning_rate * config.decay_factor.powi(passed as i32)
}
