use std::collections::HashMap;

use super::checkpoint::{Checkpoint, TokenizerRef};
use super::config::TrainConfig;
use super::data::Tokenizers;
use super::train::{bilingual_data, seeded, sized_config, MetricsLog, Run, TrainOutcome, REMAP_STREAM};
use super::Protocol;
use crate::corpus::SplitCorpus;
use crate::error::{Error, Result};
use crate::subword::SubwordModel;
use crate::tensor::Tensor;
use crate::transformer::{ModelConfig, TransformerModel};

/// Child row index → parent row index for every child token whose string
/// also occurs in the parent vocabulary.
fn row_map(parent: &SubwordModel, child: &SubwordModel) -> Vec<Option<usize>> {
    let lookup: HashMap<&str, usize> = (0..parent.vocab_size())
        .filter_map(|i| parent.token(i as u32).map(|t| (t, i)))
        .collect();
    (0..child.vocab_size())
        .map(|i| child.token(i as u32).and_then(|t| lookup.get(t).copied()))
        .collect()
}

/// Copies rows (`by_row`) or columns of `parent` into `child` where mapped.
fn remap(child: &mut Tensor, parent: &Tensor, map: &[Option<usize>], by_row: bool) {
    match (child.rank(), by_row) {
        (1, _) => {
            for (c, p) in map.iter().enumerate() {
                if let Some(p) = p {
                    child.data_mut()[c] = parent.data()[*p];
                }
            }
        }
        (_, true) => {
            let d = child.shape()[1];
            for (c, p) in map.iter().enumerate() {
                if let Some(p) = p {
                    child.data_mut()[c * d..(c + 1) * d].copy_from_slice(&parent.data()[p * d..(p + 1) * d]);
                }
            }
        }
        (_, false) => {
            let (rows, pc, cc) = (child.shape()[0], parent.shape()[1], child.shape()[1]);
            for r in 0..rows {
                for (c, p) in map.iter().enumerate() {
                    if let Some(p) = p {
                        child.data_mut()[r * cc + c] = parent.data()[r * pc + p];
                    }
                }
            }
        }
    }
}

/// Child model initialized from a parent checkpoint.
///
/// Every non-vocabulary tensor is copied. The source embedding is copied
/// whole when both source tokenizers are identical, otherwise rows are
/// matched by token string; target embedding, output weight columns and
/// output bias entries are always matched by token string. Unmatched rows
/// keep a fresh initialization drawn from `seed`. Nothing is frozen.
pub fn transfer_init(
    parent: &Checkpoint,
    parent_tok: &Tokenizers,
    child_tok: &Tokenizers,
    child_cfg: &ModelConfig,
    seed: u64,
) -> Result<TransformerModel> {
    parent.verify_tokenizers(&parent_tok.source, &parent_tok.target)?;
    let mut cfg = child_cfg.clone();
    cfg.src_vocab_size = child_tok.source.vocab_size();
    cfg.tgt_vocab_size = child_tok.target.vocab_size();
    let mut child = TransformerModel::init(cfg, &mut seeded(seed, REMAP_STREAM))?;

    let mut offending = Vec::new();
    for (name, t) in child.params().iter() {
        let Some(p) = parent.params.get(name) else {
            offending.push(format!("{name} (absent from parent)"));
            continue;
        };
        if !is_vocab_param(name) && p.shape() != t.shape() {
            offending.push(format!("{name} (parent {:?}, child {:?})", p.shape(), t.shape()));
        }
    }
    offending.extend(
        parent
            .params
            .names()
            .filter(|n| child.params().get(n).is_none())
            .map(|n| format!("{n} (absent from child)")),
    );
    if !offending.is_empty() {
        return Err(Error::Incompatible(format!(
            "parent and child architectures differ: {}",
            offending.join(", ")
        )));
    }

    let same_source = parent_tok.source.content_hash() == child_tok.source.content_hash();
    let src_map = row_map(&parent_tok.source, &child_tok.source);
    let tgt_map = row_map(&parent_tok.target, &child_tok.target);
    let names: Vec<String> = child.params().names().map(str::to_string).collect();
    for name in names {
        let p = parent.params.get(&name).expect("checked above");
        let c = child.params_mut().get_mut(&name).expect("own parameter");
        match name.as_str() {
            "encoder.embedding" if same_source => *c = p.clone(),
            "encoder.embedding" => remap(c, p, &src_map, true),
            "decoder.embedding" => remap(c, p, &tgt_map, true),
            "output.weight" => remap(c, p, &tgt_map, false),
            "output.bias" => remap(c, p, &tgt_map, true),
            _ => *c = p.clone(),
        }
    }
    Ok(child)
}

fn is_vocab_param(name: &str) -> bool {
    matches!(
        name,
        "encoder.embedding" | "decoder.embedding" | "output.weight" | "output.bias"
    )
}

/// Child training continued from a parent checkpoint with every layer
/// trainable.
pub fn train_transfer(
    parent: &Checkpoint,
    parent_tok: &Tokenizers,
    split: &SplitCorpus,
    child_tok: &Tokenizers,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = transfer_init(parent, parent_tok, child_tok, &sized_config(cfg, child_tok), cfg.seed)?;
    let data = bilingual_data(split, child_tok, cfg.model.max_seq_len)?;
    Run {
        protocol: Protocol::Transfer,
        cfg,
        data: &data,
        source_tokenizer: TokenizerRef::of(&child_tok.source, ""),
        target_tokenizer: TokenizerRef::of(&child_tok.target, ""),
    }
    .execute(model, log)
}
