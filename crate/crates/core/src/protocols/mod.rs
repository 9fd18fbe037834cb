//! Training regimes: bilingual baseline, transfer from a parent checkpoint,
//! many-to-many multilingual training, and zero-shot evaluation.

mod checkpoint;
mod config;
mod data;
mod multilingual;
mod optim;
mod train;
mod transfer;
mod zero_shot;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, TokenizerRef, FORMAT_VERSION};
pub use config::TrainConfig;
pub use data::{batches_of, encode_corpus, frame_source, nll_sum, Batcher, Example, Tokenizers, TrainData};
pub use multilingual::{joint_tokenizers, multilingual_loss, train_multilingual, MultiCorpus};
pub use optim::{noam_lr, Adam, Moments};
pub use train::{
    bilingual_data, sized_config, train_baseline, MetricRecord, MetricsLog, Run, TrainOutcome, ALL_DIRECTIONS,
};
pub use transfer::{train_transfer, transfer_init};
pub use zero_shot::zero_shot_eval;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Baseline,
    Transfer,
    Multilingual,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Baseline, Protocol::Transfer, Protocol::Multilingual];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::Transfer => "transfer",
            Protocol::Multilingual => "multilingual",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}; valid values: baseline, transfer, multilingual")))
    }
}
