use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Per-head query/key/value width.
    pub d_k: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_k,
            self.d_ff,
            self.vocab_size,
            self.max_positions,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(Error::InfeasibleConfig("decoder dimensions must be positive".into()));
        }
        if self.d_model != self.n_heads * self.d_k {
            return Err(Error::InfeasibleConfig(format!(
                "d_model {} != n_heads {} * d_k {}",
                self.d_model, self.n_heads, self.d_k
            )));
        }
        Ok(())
    }

    /// Parameters of the base decoder (no LoRA).
    pub fn base_param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 2 * d + 3 * d * d + d * d + 2 * d + d * self.d_ff + self.d_ff + self.d_ff * d + d;
        self.vocab_size * d + self.max_positions * d + self.n_layers * per_layer + 2 * d + d * self.vocab_size
    }
}

/// LoRA on the attention projections. `alpha` defaults to `2 * rank`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// One adapter per head on the fused query/key/value projection instead
    /// of three separate adapters.
    pub fused_qkv: bool,
}

impl LoraConfig {
    pub fn new(rank: usize, fused_qkv: bool) -> Self {
        Self {
            rank,
            alpha: 2.0 * rank as f64,
            fused_qkv,
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}
