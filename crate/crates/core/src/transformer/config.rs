use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// Defaults reproduce the reference setup: 6 encoder and 6 decoder blocks,
/// 8 heads, 256-dimensional representations, 1024-wide feed-forward layers
/// and dropout 0.1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            num_layers: 6,
            num_heads: 8,
            model_dim: 256,
            ff_dim: 1024,
            dropout: 0.1,
            src_vocab_size,
            tgt_vocab_size,
            max_seq_len: 256,
        }
    }

    /// Width of one attention head (query, key and value projections alike).
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Total number of learnable scalars, in closed form.
    pub fn parameter_count(&self) -> usize {
        let d = self.model_dim;
        let ff = self.ff_dim;
        let ffn = 2 * d * ff + ff + d;
        let norm = 2 * d;
        let encoder_layer = 4 * d * d + ffn + 2 * norm;
        let decoder_layer = 8 * d * d + ffn + 3 * norm;
        let embeddings = (self.src_vocab_size + self.tgt_vocab_size) * d;
        let output = d * self.tgt_vocab_size + self.tgt_vocab_size;
        embeddings + self.num_layers * (encoder_layer + decoder_layer) + output
    }

    /// True when the two configs differ at most in vocabulary sizes.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.num_layers == other.num_layers
            && self.num_heads == other.num_heads
            && self.model_dim == other.model_dim
            && self.ff_dim == other.ff_dim
            && self.max_seq_len == other.max_seq_len
    }
}
