//! Run configuration shared by `train` and `experiment`.

use std::fs;
use std::path::{Path, PathBuf};

use nmt_core::corpus::{read_split, SplitCorpus};
use nmt_core::kv::KeyValues;
use nmt_core::protocols::{
    joint_tokenizers, train_baseline, train_multilingual, train_transfer, Checkpoint, MetricsLog, MultiCorpus,
    Protocol, Tokenizers, TrainConfig, TrainOutcome,
};
use nmt_core::subword::{BpeOptions, SubwordModel};
use nmt_core::{Error, Result};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const SOURCE_TOKENIZER: &str = "source.bpe";
pub const TARGET_TOKENIZER: &str = "target.bpe";

/// Keys a run accepts besides [`TrainConfig::KEYS`].
pub const RUN_KEYS: &[&str] = &[
    "protocol",
    "data",
    "output_dir",
    "parent_checkpoint",
    "src_vocab",
    "tgt_vocab",
    "lowercase",
    "src_tokenizer",
    "tgt_tokenizer",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub protocol: Protocol,
    /// Split directories; exactly one unless multilingual.
    pub data: Vec<PathBuf>,
    pub parent_checkpoint: Option<PathBuf>,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub lowercase: bool,
    pub src_tokenizer: Option<PathBuf>,
    pub tgt_tokenizer: Option<PathBuf>,
    pub train: TrainConfig,
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunSpec {
    /// Reads a run from flat keys; relative paths resolve against `base`.
    /// With `need_parent` false a transfer run may omit its parent (the
    /// caller supplies it).
    pub fn from_kv(kv: &KeyValues, base: &Path, need_parent: bool) -> Result<Self> {
        let protocol: Protocol = kv.require("protocol")?.parse()?;
        let data: Vec<PathBuf> = kv
            .require("data")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| resolve(base, s))
            .collect();
        if data.is_empty() {
            return Err(Error::Config("`data` lists no split directories".into()));
        }
        if protocol != Protocol::Multilingual && data.len() != 1 {
            return Err(Error::Config(format!(
                "protocol {protocol} takes exactly one data directory, got {}",
                data.len()
            )));
        }
        let parent_checkpoint = kv.get("parent_checkpoint").map(|p| resolve(base, p));
        match (protocol, &parent_checkpoint) {
            (Protocol::Transfer, None) if need_parent => {
                return Err(Error::Config(
                    "protocol transfer requires key `parent_checkpoint`".into(),
                ))
            }
            (Protocol::Baseline | Protocol::Multilingual, Some(_)) => {
                return Err(Error::Config(format!(
                    "`parent_checkpoint` is only valid with protocol transfer, not {protocol}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            protocol,
            data,
            parent_checkpoint,
            src_vocab: kv.parse_or("src_vocab", 8000)?,
            tgt_vocab: kv.parse_or("tgt_vocab", 8000)?,
            lowercase: kv.parse_or("lowercase", false)?,
            src_tokenizer: kv.get("src_tokenizer").map(|p| resolve(base, p)),
            tgt_tokenizer: kv.get("tgt_tokenizer").map(|p| resolve(base, p)),
            train: TrainConfig::from_kv(kv)?,
        })
    }

    pub fn load_splits(&self) -> Result<Vec<SplitCorpus>> {
        self.data.iter().map(|d| read_split(d)).collect()
    }
}

/// Loads a checkpoint together with the tokenizers it references
/// (resolved next to the checkpoint file) and checks their hashes.
pub fn load_with_tokenizers(path: &Path) -> Result<(Checkpoint, Tokenizers)> {
    let ck = Checkpoint::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let tok = Tokenizers {
        source: SubwordModel::load(&dir.join(&ck.source_tokenizer.path))?,
        target: SubwordModel::load(&dir.join(&ck.target_tokenizer.path))?,
    };
    ck.verify_tokenizers(&tok.source, &tok.target)?;
    Ok((ck, tok))
}

fn bpe(lines: &[&str], vocab: usize, lowercase: bool, languages: Vec<String>) -> Result<SubwordModel> {
    SubwordModel::train(
        lines,
        &BpeOptions {
            vocab_size: vocab,
            lowercase,
            languages,
        },
    )
}

fn given_or(path: &Option<PathBuf>, train: impl FnOnce() -> Result<SubwordModel>) -> Result<SubwordModel> {
    match path {
        Some(p) => SubwordModel::load(p),
        None => train(),
    }
}

/// Trains one run into `out_dir`: tokenizers, metrics log, final and
/// best checkpoints. `parent` overrides the spec's parent checkpoint.
pub fn execute(spec: &RunSpec, out_dir: &Path, parent: Option<&Path>) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let splits = spec.load_splits()?;
    let metrics = out_dir.join(METRICS_FILE);
    if metrics.exists() {
        fs::remove_file(&metrics).map_err(|e| Error::Io {
            path: metrics.clone(),
            source: e,
        })?;
    }
    let mut log = MetricsLog::to_file(&metrics)?;
    let (tok, outcome) = match spec.protocol {
        Protocol::Baseline => {
            let s = &splits[0];
            let tok = Tokenizers {
                source: given_or(&spec.src_tokenizer, || {
                    bpe(&s.train.sources().collect::<Vec<_>>(), spec.src_vocab, spec.lowercase, Vec::new())
                })?,
                target: given_or(&spec.tgt_tokenizer, || {
                    bpe(&s.train.targets().collect::<Vec<_>>(), spec.tgt_vocab, spec.lowercase, Vec::new())
                })?,
            };
            let out = train_baseline(s, &tok, &spec.train, &mut log)?;
            (tok, out)
        }
        Protocol::Multilingual => {
            let tok = match (&spec.src_tokenizer, &spec.tgt_tokenizer) {
                (Some(s), Some(t)) => Tokenizers {
                    source: SubwordModel::load(s)?,
                    target: SubwordModel::load(t)?,
                },
                _ => joint_tokenizers(&splits, spec.src_vocab, spec.tgt_vocab, spec.lowercase)?,
            };
            let mc = MultiCorpus::new(splits, tok.clone())?;
            let out = train_multilingual(&mc, &spec.train, &mut log)?;
            (tok, out)
        }
        Protocol::Transfer => {
            let parent_path = parent
                .map(Path::to_path_buf)
                .or_else(|| spec.parent_checkpoint.clone())
                .ok_or_else(|| Error::Config("protocol transfer requires key `parent_checkpoint`".into()))?;
            let (parent_ck, parent_tok) = load_with_tokenizers(&parent_path)?;
            let s = &splits[0];
            let tok = Tokenizers {
                // The source language is shared with the parent task, so its
                // tokenizer (and embedding table) carries over unchanged.
                source: given_or(&spec.src_tokenizer, || Ok(parent_tok.source.clone()))?,
                target: given_or(&spec.tgt_tokenizer, || {
                    bpe(&s.train.targets().collect::<Vec<_>>(), spec.tgt_vocab, spec.lowercase, Vec::new())
                })?,
            };
            let out = train_transfer(&parent_ck, &parent_tok, s, &tok, &spec.train, &mut log)?;
            (tok, out)
        }
    };
    tok.source.save(&out_dir.join(SOURCE_TOKENIZER))?;
    tok.target.save(&out_dir.join(TARGET_TOKENIZER))?;
    let finish = |mut ck: Checkpoint, name: &str| -> Result<Checkpoint> {
        ck.source_tokenizer.path = SOURCE_TOKENIZER.into();
        ck.target_tokenizer.path = TARGET_TOKENIZER.into();
        ck.save(&out_dir.join(name))?;
        Ok(ck)
    };
    // Best goes last: its presence marks a completed run.
    let last = finish(outcome.last, FINAL_CHECKPOINT)?;
    let best = finish(outcome.best, BEST_CHECKPOINT)?;
    Ok(TrainOutcome { last, best, ..outcome })
}
