use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Must be even: interleaved decoder blocks consume encoder layers in pairs.
    pub encoder_layers: usize,
    pub decoder_blocks: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Normalize before each sub-layer instead of after the residual add.
    #[serde(default)]
    pub pre_norm: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Base-size preset: 768 hidden, 3072 FFN, 12 heads, 12 encoder layers and
    /// the 6 interleaved blocks they map onto.
    pub fn base() -> Self {
        Self {
            vocab_size: 250_002,
            hidden: 768,
            ffn_dim: 3072,
            heads: 12,
            encoder_layers: 12,
            decoder_blocks: 6,
            max_positions: 514,
            dropout: 0.1,
            pre_norm: false,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small configuration used by the demos and tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 64,
            ffn_dim: 128,
            heads: 4,
            encoder_layers: 2,
            decoder_blocks: 1,
            max_positions: 64,
            dropout: 0.0,
            pre_norm: false,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("ffn_dim", self.ffn_dim),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_blocks", self.decoder_blocks),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !self.encoder_layers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "encoder_layers must be even, got {}",
                self.encoder_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.layer_norm_eps < 0.0 {
            return Err(Error::Config("layer_norm_eps must be non-negative".into()));
        }
        Ok(())
    }
}
