//! Encoder-decoder transformer.

pub mod attention;
mod config;
mod model;
mod params;

pub use attention::{attention_head, multi_head, HeadWeights, Mask};
pub use config::ModelConfig;
pub use model::{positional_encoding, Bound, Memory, Seq2SeqBatch, TransformerModel};
pub use params::ParamStore;
