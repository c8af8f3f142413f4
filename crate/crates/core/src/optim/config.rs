use serde::{Deserialize, Serialize};

use super::OptimError;

/// Dropout `rate` for epochs in `start_epoch..end_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutPhase {
    pub start_epoch: u64,
    pub end_epoch: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_frac: f64,
    /// Defaults to `epochs * updates_per_epoch`.
    #[serde(default)]
    pub total_steps: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub update_frequency: usize,
    /// Empty means the model config's dropout throughout.
    #[serde(default)]
    pub dropout_schedule: Vec<DropoutPhase>,
    pub epochs: u64,
    pub seed: u64,
    /// Padded tokens (source plus target) per microbatch.
    #[serde(default = "default_batch_tokens")]
    pub batch_tokens: usize,
    /// Decoupled weight decay; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables it.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Save `ckpt_step{N}.bin` every this many updates.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

fn default_batch_tokens() -> usize {
    4096
}

impl TrainConfig {
    /// Pretraining defaults: peak 6e-4, 6% warmup, update frequency 2,
    /// dropout 0.1 for the first 80% of epochs and 0 afterwards.
    pub fn pretrain_default(epochs: u64) -> Self {
        let switch = (0.8 * epochs as f64).round() as u64;
        Self {
            peak_lr: 6e-4,
            warmup_frac: 0.06,
            total_steps: None,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            update_frequency: 2,
            dropout_schedule: vec![
                DropoutPhase {
                    start_epoch: 0,
                    end_epoch: switch,
                    rate: 0.1,
                },
                DropoutPhase {
                    start_epoch: switch,
                    end_epoch: epochs,
                    rate: 0.0,
                },
            ],
            epochs,
            seed: 0,
            batch_tokens: default_batch_tokens(),
            weight_decay: 0.0,
            clip_norm: None,
            checkpoint_every: None,
        }
    }

    /// Finetuning defaults: 3 epochs, peak 5e-5, no warmup, linear decay.
    pub fn finetune_default() -> Self {
        Self {
            peak_lr: 5e-5,
            warmup_frac: 0.0,
            update_frequency: 1,
            dropout_schedule: Vec::new(),
            epochs: 3,
            ..Self::pretrain_default(3)
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidConfig(msg));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac must be in [0, 1), got {}", self.warmup_frac));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.update_frequency == 0 {
            return bad("update_frequency must be at least 1".into());
        }
        if self.epochs == 0 && self.total_steps.is_none() {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be at least 1".into());
        }
        if self.total_steps == Some(0) {
            return bad("total_steps must be at least 1".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative".into());
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        for p in &self.dropout_schedule {
            if p.start_epoch >= p.end_epoch && !(p.start_epoch == p.end_epoch && p.start_epoch == self.epochs) {
                return bad(format!("empty dropout phase {}..{}", p.start_epoch, p.end_epoch));
            }
            if !(0.0..1.0).contains(&p.rate) {
                return bad(format!("dropout rate must be in [0, 1), got {}", p.rate));
            }
        }
        Ok(())
    }

    /// Dropout for `epoch`: the first matching phase, the last phase's rate
    /// past the end of the schedule, or `model_default` with no schedule.
    pub fn dropout_for_epoch(&self, epoch: u64, model_default: f64) -> f64 {
        if let Some(p) = self
            .dropout_schedule
            .iter()
            .find(|p| (p.start_epoch..p.end_epoch).contains(&epoch))
        {
            return p.rate;
        }
        self.dropout_schedule
            .iter()
            .max_by_key(|p| p.end_epoch)
            .map_or(model_default, |p| p.rate)
    }
}
