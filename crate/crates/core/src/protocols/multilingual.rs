use rand::Rng;

use super::checkpoint::TokenizerRef;
use super::config::TrainConfig;
use super::data::{encode_corpus, Tokenizers, TrainData};
use super::train::{seeded, sized_config, MetricsLog, Run, TrainOutcome, INIT_STREAM};
use super::Protocol;
use crate::corpus::{Direction, SplitCorpus};
use crate::error::{Error, Result};
use crate::subword::{BpeOptions, SubwordModel};
use crate::tensor::{Reduction, Var};
use crate::transformer::{Bound, Seq2SeqBatch, TransformerModel};

/// Direction-labelled splits trained jointly, plus the shared tokenizers.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCorpus {
    splits: Vec<SplitCorpus>,
    tokenizers: Tokenizers,
}

impl MultiCorpus {
    /// Every direction must be distinct and its target language must have
    /// a tag in the source tokenizer.
    pub fn new(splits: Vec<SplitCorpus>, tokenizers: Tokenizers) -> Result<Self> {
        if splits.is_empty() {
            return Err(Error::Usage("multilingual training needs at least one direction".into()));
        }
        for (i, s) in splits.iter().enumerate() {
            let dir = s.direction();
            if splits[..i].iter().any(|o| o.direction() == dir) {
                return Err(Error::Usage(format!("direction {dir} listed twice")));
            }
            if tokenizers.source.tag_id(&dir.tgt).is_none() {
                return Err(Error::Usage(format!(
                    "target language {:?} of {dir} has no tag in the source tokenizer",
                    dir.tgt
                )));
            }
        }
        Ok(Self { splits, tokenizers })
    }

    pub fn splits(&self) -> &[SplitCorpus] {
        &self.splits
    }

    pub fn tokenizers(&self) -> &Tokenizers {
        &self.tokenizers
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.splits.iter().map(|s| s.direction().clone()).collect()
    }

    /// Tagged examples pooled over all directions.
    pub fn data(&self, max_len: usize) -> Result<TrainData> {
        let mut data = TrainData {
            directions: self.directions(),
            ..TrainData::default()
        };
        for (i, s) in self.splits.iter().enumerate() {
            let tag = Some(s.direction().tgt.as_str());
            data.train.extend(encode_corpus(&s.train, &self.tokenizers, tag, i, max_len)?.0);
            data.valid.push(encode_corpus(&s.valid, &self.tokenizers, tag, i, max_len)?.0);
        }
        Ok(data)
    }
}

/// Joint tokenizers: one source model over every source side (carrying a
/// tag for every target language) and one target model over every target
/// side. Only train partitions are read.
pub fn joint_tokenizers(
    splits: &[SplitCorpus],
    src_vocab: usize,
    tgt_vocab: usize,
    lowercase: bool,
) -> Result<Tokenizers> {
    let mut langs: Vec<String> = splits.iter().map(|s| s.direction().tgt.clone()).collect();
    langs.sort();
    langs.dedup();
    let sources: Vec<&str> = splits.iter().flat_map(|s| s.train.sources()).collect();
    let targets: Vec<&str> = splits.iter().flat_map(|s| s.train.targets()).collect();
    let source = SubwordModel::train(
        &sources,
        &BpeOptions {
            vocab_size: src_vocab,
            lowercase,
            languages: langs,
        },
    )?;
    let target = SubwordModel::train(
        &targets,
        &BpeOptions {
            vocab_size: tgt_vocab,
            lowercase,
            languages: Vec::new(),
        },
    )?;
    Ok(Tokenizers { source, target })
}

/// Pooled objective: summed token NLL over every direction's batch divided
/// by the total number of target tokens.
pub fn multilingual_loss<'t, R: Rng + ?Sized>(
    model: &TransformerModel,
    bound: &Bound<'t>,
    groups: &[Seq2SeqBatch],
    mut rng: Option<&mut R>,
) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    let mut tokens = 0;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let l = model.batch_loss(bound, g, Reduction::Sum, rng.as_deref_mut())?;
        tokens += g.target_tokens();
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Usage("no examples in any direction".into()))?;
    Ok(total.scale(1.0 / tokens as f64))
}

/// One shared encoder-decoder trained on the pooled, tagged pair set.
pub fn train_multilingual(mc: &MultiCorpus, cfg: &TrainConfig, log: &mut MetricsLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = mc.data(cfg.model.max_seq_len)?;
    let tok = mc.tokenizers();
    let model = TransformerModel::init(sized_config(cfg, tok), &mut seeded(cfg.seed, INIT_STREAM))?;
    Run {
        protocol: Protocol::Multilingual,
        cfg,
        data: &data,
        source_tokenizer: TokenizerRef::of(&tok.source, ""),
        target_tokenizer: TokenizerRef::of(&tok.target, ""),
    }
    .execute(model, log)
}
