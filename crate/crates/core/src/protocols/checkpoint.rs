//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `NMTCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! one raw block of little-endian `f64` values per parameter in manifest
//! order. Each manifest entry records the parameter path, its shape and the
//! byte offset of its block relative to the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Protocol;
use crate::corpus::Direction;
use crate::error::{Error, Result};
use crate::subword::SubwordModel;
use crate::tensor::Tensor;
use crate::transformer::{ModelConfig, ParamStore, TransformerModel};

const MAGIC: &[u8; 8] = b"NMTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Where a tokenizer lives and what it must hash to.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerRef {
    pub path: String,
    pub hash: String,
}

impl TokenizerRef {
    pub fn of(model: &SubwordModel, path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            hash: model.content_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub protocol: Protocol,
    pub label: String,
    pub seed: u64,
    pub step: usize,
    pub directions: Vec<Direction>,
    pub source_tokenizer: TokenizerRef,
    pub target_tokenizer: TokenizerRef,
    pub config: ModelConfig,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    protocol: Protocol,
    label: String,
    seed: u64,
    step: usize,
    directions: Vec<Direction>,
    source_tokenizer: TokenizerRef,
    target_tokenizer: TokenizerRef,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<TransformerModel> {
        TransformerModel::from_params(self.config.clone(), self.params.clone())
    }

    pub fn is_multilingual(&self) -> bool {
        self.protocol == Protocol::Multilingual
    }

    /// Fails unless both tokenizers hash to the recorded values.
    pub fn verify_tokenizers(&self, source: &SubwordModel, target: &SubwordModel) -> Result<()> {
        for (side, expected, model) in [
            ("source", &self.source_tokenizer, source),
            ("target", &self.target_tokenizer, target),
        ] {
            let actual = model.content_hash();
            if actual != expected.hash {
                return Err(Error::Incompatible(format!(
                    "{side} tokenizer hash {actual} does not match checkpoint ({}, recorded as {})",
                    expected.hash, expected.path
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            protocol: self.protocol,
            label: self.label.clone(),
            seed: self.seed,
            step: self.step,
            directions: self.directions.clone(),
            source_tokenizer: self.source_tokenizer.clone(),
            target_tokenizer: self.target_tokenizer.clone(),
            config: self.config.clone(),
            params,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start = 20usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[20..data_start])
            .map_err(|e| bad(&format!("manifest: {e}")))?;
        let data = &bytes[data_start..];
        let mut params = ParamStore::new();
        let mut expected = 0u64;
        for e in &manifest.params {
            if e.offset != expected {
                return Err(bad(&format!("block for {} is not contiguous", e.name)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > data.len() {
                return Err(bad(&format!("block for {} is truncated", e.name)));
            }
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(e.name.clone(), Tensor::new(&e.shape, values)?)?;
            expected = end as u64;
        }
        if expected as usize != data.len() {
            return Err(bad("trailing bytes after last parameter block"));
        }
        Ok(Self {
            protocol: manifest.protocol,
            label: manifest.label,
            seed: manifest.seed,
            step: manifest.step,
            directions: manifest.directions,
            source_tokenizer: manifest.source_tokenizer,
            target_tokenizer: manifest.target_tokenizer,
            config: manifest.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write then rename so an interrupted save never leaves a partial file.
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> Checkpoint {
        let mut cfg = ModelConfig::new(11, 13);
        cfg.num_layers = 1;
        cfg.num_heads = 2;
        cfg.model_dim = 8;
        cfg.ff_dim = 12;
        let model = TransformerModel::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        Checkpoint {
            protocol: Protocol::Baseline,
            label: "t".into(),
            seed: 4,
            step: 0,
            directions: vec![Direction::new("en", "zu")],
            source_tokenizer: TokenizerRef::default(),
            target_tokenizer: TokenizerRef::default(),
            config: cfg,
            params: model.into_params(),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}
