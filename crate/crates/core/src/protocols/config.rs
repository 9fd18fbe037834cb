use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::transformer::ModelConfig;

/// Optimization and bookkeeping settings for one training run.
///
/// The seed determines initialization, batch order and dropout masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Architecture; vocabulary sizes are overwritten from the tokenizers.
    pub model: ModelConfig,
    /// Target tokens per batch (EOS included).
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub warmup: usize,
    /// Multiplier applied to the Noam rate.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps between validation passes (and best-checkpoint candidates).
    pub eval_every: usize,
    /// Early stop after this many evaluations without improvement.
    pub patience: usize,
    pub label: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::new(1, 1),
            batch_tokens: 2048,
            max_steps: 100_000,
            seed: 1,
            warmup: 4000,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            eval_every: 1000,
            patience: 10,
            label: "run".to_string(),
        }
    }
}

impl TrainConfig {
    /// Keys understood by [`TrainConfig::from_kv`].
    pub const KEYS: &'static [&'static str] = &[
        "num_layers",
        "num_heads",
        "model_dim",
        "ff_dim",
        "dropout",
        "max_seq_len",
        "batch_tokens",
        "max_steps",
        "seed",
        "warmup",
        "lr_scale",
        "beta1",
        "beta2",
        "eps",
        "eval_every",
        "patience",
        "label",
    ];

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let mut model = d.model.clone();
        model.num_layers = kv.parse_or("num_layers", model.num_layers)?;
        model.num_heads = kv.parse_or("num_heads", model.num_heads)?;
        model.model_dim = kv.parse_or("model_dim", model.model_dim)?;
        model.ff_dim = kv.parse_or("ff_dim", model.ff_dim)?;
        model.dropout = kv.parse_or("dropout", model.dropout)?;
        model.max_seq_len = kv.parse_or("max_seq_len", model.max_seq_len)?;
        let cfg = Self {
            model,
            batch_tokens: kv.parse_or("batch_tokens", d.batch_tokens)?,
            max_steps: kv.parse_or("max_steps", d.max_steps)?,
            seed: kv.parse_or("seed", d.seed)?,
            warmup: kv.parse_or("warmup", d.warmup)?,
            lr_scale: kv.parse_or("lr_scale", d.lr_scale)?,
            beta1: kv.parse_or("beta1", d.beta1)?,
            beta2: kv.parse_or("beta2", d.beta2)?,
            eps: kv.parse_or("eps", d.eps)?,
            eval_every: kv.parse_or("eval_every", d.eval_every)?,
            patience: kv.parse_or("patience", d.patience)?,
            label: kv.get("label").unwrap_or(&d.label).to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.warmup < 1 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        if self.batch_tokens == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_tokens and eval_every must be positive".into()));
        }
        if !(self.lr_scale.is_finite() && self.lr_scale >= 0.0) {
            return Err(Error::Config("lr_scale must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam constants need 0 <= beta < 1 and eps > 0".into()));
        }
        Ok(())
    }
}
