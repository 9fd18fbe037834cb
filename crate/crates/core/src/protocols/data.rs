use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Direction, ParallelCorpus};
use crate::error::{Error, Result};
use crate::subword::{SubwordModel, TokenId, EOS_ID};
use crate::tensor::Reduction;
use crate::transformer::{Seq2SeqBatch, TransformerModel};

/// Source and target subword models of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizers {
    pub source: SubwordModel,
    pub target: SubwordModel,
}

/// One encoded training pair. `src` is framed (optional tag, EOS);
/// `tgt` is bare.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    /// Index into the run's direction list.
    pub direction: usize,
}

/// Framed source ids: optional target-language tag, subwords, EOS.
pub fn frame_source(tok: &SubwordModel, text: &str, tag: Option<&str>) -> Result<Vec<TokenId>> {
    let mut ids = tok.encode(text);
    if let Some(lang) = tag {
        ids = tok.tag_source(&ids, lang)?;
    }
    ids.push(EOS_ID);
    Ok(ids)
}

/// Encodes a corpus, dropping pairs that exceed `max_len` on either side
/// once framed. Returns the examples and the number dropped.
pub fn encode_corpus(
    corpus: &ParallelCorpus,
    tok: &Tokenizers,
    tag: Option<&str>,
    direction: usize,
    max_len: usize,
) -> Result<(Vec<Example>, usize)> {
    let mut out = Vec::with_capacity(corpus.len());
    let mut dropped = 0;
    for p in &corpus.pairs {
        let src = frame_source(&tok.source, &p.src, tag)?;
        let tgt = tok.target.encode(&p.tgt);
        if src.len() > max_len || tgt.len() + 1 > max_len {
            dropped += 1;
            continue;
        }
        out.push(Example { src, tgt, direction });
    }
    Ok((out, dropped))
}

/// Training and validation examples for one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub directions: Vec<Direction>,
    pub train: Vec<Example>,
    /// Validation examples per direction, parallel to `directions`.
    pub valid: Vec<Vec<Example>>,
}

/// Groups consecutive examples into batches of at most `budget` target
/// tokens (a single longer example still forms its own batch).
pub fn batches_of<'a>(examples: impl IntoIterator<Item = &'a Example>, budget: usize) -> Vec<Seq2SeqBatch> {
    let mut out = Vec::new();
    let mut cur = Seq2SeqBatch::default();
    let mut tokens = 0;
    for e in examples {
        let n = e.tgt.len() + 1;
        if !cur.is_empty() && tokens + n > budget {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.src.push(e.src.clone());
        cur.tgt.push(e.tgt.clone());
        tokens += n;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Endless stream of token-budget batches. Every example is equally
/// likely; each epoch visits the pool once in a fresh seeded order.
pub struct Batcher<'a> {
    pool: &'a [Example],
    order: Vec<usize>,
    pos: usize,
    budget: usize,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Batcher<'a> {
    pub fn new(pool: &'a [Example], budget: usize, rng: ChaCha8Rng) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Usage("no training examples".into()));
        }
        let mut b = Self {
            pool,
            order: (0..pool.len()).collect(),
            pos: 0,
            budget,
            rng,
            epoch: 0,
        };
        b.order.shuffle(&mut b.rng);
        Ok(b)
    }

    /// Completed passes over the pool.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Seq2SeqBatch {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let mut batch = Seq2SeqBatch::default();
        let mut tokens = 0;
        while self.pos < self.order.len() {
            let e = &self.pool[self.order[self.pos]];
            let n = e.tgt.len() + 1;
            if !batch.is_empty() && tokens + n > self.budget {
                break;
            }
            batch.src.push(e.src.clone());
            batch.tgt.push(e.tgt.clone());
            tokens += n;
            self.pos += 1;
        }
        batch
    }
}

/// Summed token NLL and token count over `examples`, evaluation mode.
pub fn nll_sum(model: &TransformerModel, examples: &[Example], budget: usize) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for batch in batches_of(examples, budget) {
        let tape = crate::tensor::Tape::new();
        let bound = model.bind(&tape, false);
        let loss = model.batch_loss(&bound, &batch, Reduction::Sum, None::<&mut ChaCha8Rng>)?;
        total += loss.value().item();
        tokens += batch.target_tokens();
    }
    Ok((total, tokens))
}
