//! Small synthetic training setups shared by the protocol tests and the
//! acceptance target.

use nmt_core::corpus::{split, Direction, ParallelCorpus, SplitCorpus};
use nmt_core::eval::{DecodeOptions, Translator};
use nmt_core::protocols::{joint_tokenizers, Tokenizers, TrainConfig};
use nmt_core::subword::{BpeOptions, SubwordModel};
use nmt_core::synthetic::{copy_corpus, LanguageFamily};
use nmt_core::transformer::TransformerModel;

/// Two-layer, two-head, 32-wide model trained with 200-token batches.
pub fn small_config(seed: u64, steps: usize, dropout: f64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.num_layers = 2;
    cfg.model.num_heads = 2;
    cfg.model.model_dim = 32;
    cfg.model.ff_dim = 64;
    cfg.model.dropout = dropout;
    cfg.batch_tokens = 200;
    cfg.max_steps = steps;
    cfg.warmup = 200;
    cfg.lr_scale = 1.0;
    cfg.eval_every = 100;
    cfg.patience = 0;
    cfg.seed = seed;
    cfg
}

pub fn bpe<S: AsRef<str>>(lines: &[S], vocab: usize) -> SubwordModel {
    SubwordModel::train(
        lines,
        &BpeOptions {
            vocab_size: vocab,
            ..BpeOptions::default()
        },
    )
    .unwrap()
}

/// Per-side tokenizers learned on the train partition only.
pub fn bilingual_tokenizers(s: &SplitCorpus, vocab: usize) -> Tokenizers {
    Tokenizers {
        source: bpe(&s.train.sources().collect::<Vec<_>>(), vocab),
        target: bpe(&s.train.targets().collect::<Vec<_>>(), vocab),
    }
}

/// 500 distinct copy pairs over a 20-word lexicon, split by `seed`.
pub fn copy_task(seed: u64) -> (SplitCorpus, Tokenizers) {
    let s = split(&copy_corpus(500, 20, 3, 8, 100 + seed), seed).unwrap();
    let tok = bilingual_tokenizers(&s, 64);
    (s, tok)
}

pub fn copy_config(seed: u64, steps: usize) -> TrainConfig {
    let mut cfg = small_config(seed, steps, 0.0);
    cfg.lr_scale = 2.0;
    cfg.eval_every = 200;
    cfg
}

/// Fraction of test sources reproduced exactly, and corpus BLEU.
pub fn exact_match_and_bleu(model: &TransformerModel, tok: &Tokenizers, test: &ParallelCorpus, target_lang: Option<&str>) -> (f64, f64) {
    let tr = Translator {
        model,
        tokenizers: tok,
        target_lang: target_lang.map(str::to_string),
        options: DecodeOptions::greedy(),
    };
    let srcs: Vec<&str> = test.sources().collect();
    let hyps = tr.translate_all(&srcs).unwrap();
    let exact = hyps.iter().zip(test.targets()).filter(|(h, t)| h.as_str() == *t).count();
    (exact as f64 / srcs.len() as f64, tr.bleu(test, false).unwrap().score)
}

/// English plus two related languages sharing 70% of their words; the
/// en→zu direction has a tenth of the en→xh data.
pub struct RelatedPair {
    pub low: SplitCorpus,
    pub high: SplitCorpus,
}

pub fn related_pair() -> RelatedPair {
    let fam = LanguageFamily::generate(&["en", "xh", "zu"], &[None, None, Some(1)], 40, 0.7, 7);
    RelatedPair {
        low: split(&fam.corpus("en", "zu", 300, 3, 7, 11), 1).unwrap(),
        high: split(&fam.corpus("en", "xh", 3000, 3, 7, 12), 1).unwrap(),
    }
}

/// Languages a, b, c with b sharing 70% of a's words; training covers
/// a→b and b→c, and a→c is held out.
pub struct Bridge {
    pub ab: SplitCorpus,
    pub bc: SplitCorpus,
    pub ac_test: ParallelCorpus,
    pub tokenizers: Tokenizers,
}

pub fn bridge() -> Bridge {
    let fam = LanguageFamily::generate(&["a", "b", "c"], &[None, Some(0), None], 40, 0.7, 7);
    let ab = split(&fam.corpus("a", "b", 1000, 3, 7, 21), 1).unwrap();
    let bc = split(&fam.corpus("b", "c", 1000, 3, 7, 22), 1).unwrap();
    let ac_test = fam.corpus("a", "c", 100, 3, 7, 23);
    let tokenizers = joint_tokenizers(&[ab.clone(), bc.clone()], 300, 300, false).unwrap();
    Bridge {
        ab,
        bc,
        ac_test,
        tokenizers,
    }
}

pub fn direction(s: &str) -> Direction {
    s.parse().unwrap()
}
