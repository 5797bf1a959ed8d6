//! Model and loss hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden dimension D used by every transformer layer.
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Local window length M for the temporal encoder.
    pub window_len: usize,
    /// Number of learnable subparagraph vectors E.
    pub subparagraph_count: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Weight of the localization loss (also divides the L1 term).
    pub lambda1: f64,
    /// Weight of the attention loss.
    pub lambda2: f64,
    /// Paragraph-shuffle curriculum horizon in epochs.
    pub t_max: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 512,
            heads: 8,
            ffn_dim: 2048,
            window_len: 25,
            subparagraph_count: 10,
            encoder_layers: 2,
            decoder_layers: 3,
            lambda1: 1.0,
            lambda2: 0.2,
            t_max: 20,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 50,
        }
    }
}

impl ModelConfig {
    /// A small configuration for fast tests and gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            hidden_dim: 8,
            heads: 2,
            ffn_dim: 16,
            window_len: 3,
            subparagraph_count: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            lambda1: 1.0,
            lambda2: 0.2,
            t_max: 20,
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("window_len", self.window_len),
            ("subparagraph_count", self.subparagraph_count),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("t_max", self.t_max),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("config {name} must be positive")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(self.lambda1 > 0.0) {
            return Err(Error::invalid("lambda1 must be > 0"));
        }
        if self.lambda2 < 0.0 {
            return Err(Error::invalid("lambda2 must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            hidden_dim: 10,
            heads: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
