use std::thread;

use super::bleu::{text_bleu, Bleu};
use super::decode::{beam_decode, greedy_decode};
use crate::corpus::ParallelCorpus;
use crate::error::Result;
use crate::protocols::{frame_source, Tokenizers};
use crate::subword::EOS_ID;
use crate::transformer::TransformerModel;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    /// 1 selects greedy decoding.
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Output cap; by default `2·source + 10`, bounded by the model.
    pub max_len: Option<usize>,
    pub threads: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam_size: 4,
            length_penalty: 0.6,
            max_len: None,
            threads: thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl DecodeOptions {
    pub fn greedy() -> Self {
        Self {
            beam_size: 1,
            length_penalty: 0.0,
            ..Self::default()
        }
    }
}

/// Text-to-text translation with a model and its tokenizers.
pub struct Translator<'a> {
    pub model: &'a TransformerModel,
    pub tokenizers: &'a Tokenizers,
    /// Tag prepended to every source (multilingual models).
    pub target_lang: Option<String>,
    pub options: DecodeOptions,
}

impl Translator<'_> {
    /// Blank input gives blank output. Overlong sources are truncated to
    /// the model's maximum length.
    pub fn translate(&self, text: &str) -> Result<String> {
        if text.trim().is_empty() {
            return Ok(String::new());
        }
        let cap = self.model.config().max_seq_len;
        let mut src = frame_source(&self.tokenizers.source, text, self.target_lang.as_deref())?;
        if src.len() > cap {
            src.truncate(cap - 1);
            src.push(EOS_ID);
        }
        let max_len = self.options.max_len.unwrap_or(2 * src.len() + 10).min(cap);
        let out = if self.options.beam_size <= 1 {
            greedy_decode(self.model, &src, max_len)?
        } else {
            beam_decode(
                self.model,
                &src,
                self.options.beam_size,
                max_len,
                self.options.length_penalty,
            )?
        };
        Ok(self.tokenizers.target.decode(&out))
    }

    /// Translations in input order, computed on up to `threads` workers.
    pub fn translate_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<String>> {
        let workers = self.options.threads.max(1).min(texts.len().max(1));
        let chunk = texts.len().div_ceil(workers).max(1);
        let parts: Vec<Result<Vec<String>>> = thread::scope(|s| {
            let handles: Vec<_> = texts
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|t| self.translate(t.as_ref())).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("translation worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(texts.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Corpus BLEU of the translations of `test`'s sources.
    pub fn bleu(&self, test: &ParallelCorpus, smooth: bool) -> Result<Bleu> {
        let sources: Vec<&str> = test.sources().collect();
        let refs: Vec<&str> = test.targets().collect();
        let hyps = self.translate_all(&sources)?;
        text_bleu(&hyps, &refs.iter().map(|s| s.to_string()).collect::<Vec<_>>(), smooth)
    }
}
