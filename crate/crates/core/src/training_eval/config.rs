use serde::{Deserialize, Serialize};

use crate::context_fields::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Conversations per optimiser step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Minimum token frequency for the vocabulary.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 10,
            patience: 3,
            clip_norm: 1.0,
            seed: 7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam hyperparameters out of range");
        }
        if self.min_count == 0 {
            return bad("min_count must be positive");
        }
        Ok(())
    }
}
