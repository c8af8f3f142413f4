use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub final_layernorm: bool,
}

impl ModelConfig {
    /// The BART-base shape with a 50K vocabulary and extra final norms.
    pub fn bart_base() -> Self {
        Self {
            enc_layers: 6,
            dec_layers: 6,
            d_model: 768,
            n_heads: 12,
            d_ffn: 3072,
            vocab_size: 50_000,
            max_positions: 1024,
            dropout: 0.1,
            final_layernorm: true,
        }
    }

    /// A small configuration that trains in seconds on one core.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            enc_layers: 1,
            dec_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size,
            max_positions: 16,
            dropout: 0.0,
            final_layernorm: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Closed-form scalar count for `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<u64, ModelError> {
    cfg.validate()?;
    let d = cfg.d_model as u64;
    let f = cfg.d_ffn as u64;
    let attention = 4 * d * d + 4 * d;
    let ffn = 2 * d * f + d + f;
    let norm = 2 * d;
    let embeddings = cfg.vocab_size as u64 * d + cfg.max_positions as u64 * d;
    let encoder_layer = attention + ffn + 2 * norm;
    let decoder_layer = 2 * attention + ffn + 3 * norm;
    let final_norms = if cfg.final_layernorm { 2 * norm } else { 0 };
    Ok(embeddings
        + cfg.enc_layers as u64 * encoder_layer
        + cfg.dec_layers as u64 * decoder_layer
        + final_norms)
}
