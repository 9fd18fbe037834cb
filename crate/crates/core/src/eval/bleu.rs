use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU-4 on a 0–100 scale with its components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bleu {
    pub score: f64,
    /// Modified n-gram precisions for n = 1..4, as fractions.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a, S: AsRef<str>>(tokens: &'a [S], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 over tokenized sentences. With `smooth`, orders 2–4 use add-one
/// counts, which keeps tiny test sets from collapsing to zero.
pub fn corpus_bleu_with<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], smooth: bool) -> Result<Bleu> {
    if hyps.len() != refs.len() {
        return Err(Error::Usage(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(rf, n);
            for (g, k) in ngram_counts(h, n) {
                matched[n - 1] += k.min(ref_counts.get(&g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if smooth && n > 0 {
            (matched[n] + 1) as f64 / (total[n] + 1) as f64
        } else if total[n] == 0 {
            0.0
        } else {
            matched[n] as f64 / total[n] as f64
        };
    }
    let brevity_penalty = if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).min(0.0).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(Bleu {
        score,
        precisions,
        brevity_penalty,
        hyp_len: c,
        ref_len: r,
    })
}

/// Unsmoothed corpus BLEU-4.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<Bleu> {
    corpus_bleu_with(hyps, refs, false)
}

/// BLEU on detokenized sentences, split on whitespace.
pub fn text_bleu<S: AsRef<str>>(hyps: &[S], refs: &[S], smooth: bool) -> Result<Bleu> {
    let split = |xs: &[S]| -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.as_ref().split_whitespace().map(str::to_string).collect())
            .collect()
    };
    corpus_bleu_with(&split(hyps), &split(refs), smooth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_100_and_disjoint_is_0() {
        let h = vec![toks("a b c d e"), toks("f g h i")];
        assert!((corpus_bleu(&h, &h).unwrap().score - 100.0).abs() < 1e-12);
        let d = vec![toks("v w x y z"), toks("p q r s")];
        assert_eq!(corpus_bleu(&h, &d).unwrap().score, 0.0);
    }

    #[test]
    fn repeated_word_by_hand() {
        // "the the the cat" vs "the cat sat down":
        // 1-grams: the×3 clipped to 1, cat 1 → 2/4
        // 2-grams: "the the"×2 (0), "the cat" (1) → 1/3
        // 3-grams: "the the the", "the the cat" → 0/2, so BLEU = 0.
        let b = corpus_bleu(&[toks("the the the cat")], &[toks("the cat sat down")]).unwrap();
        assert_eq!(b.precisions[0], 0.5);
        assert!((b.precisions[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.precisions[2], 0.0);
        assert_eq!(b.score, 0.0);
        assert_eq!(b.brevity_penalty, 1.0);
        let s = corpus_bleu_with(&[toks("the the the cat")], &[toks("the cat sat down")], true).unwrap();
        let expected = 100.0 * (0.5f64 * (2.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0)).powf(0.25);
        assert!((s.score - expected).abs() < 1e-9);
    }

    #[test]
    fn count_mismatch_is_usage_error() {
        assert!(matches!(
            corpus_bleu(&[toks("a")], &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        let b = text_bleu(&["", ""], &["a b", "c"], false).unwrap();
        assert_eq!(b.score, 0.0);
        assert_eq!(b.brevity_penalty, 0.0);
    }
}
