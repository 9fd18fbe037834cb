use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::subword::{TokenId, BOS_ID, EOS_ID};
use crate::transformer::{Memory, TransformerModel};

/// Anything that scores next tokens given equal-length, BOS-initial
/// prefixes.
pub trait StepModel {
    fn next_log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>;
}

/// A transformer conditioned on one encoded source.
pub struct Conditioned<'a> {
    pub model: &'a TransformerModel,
    pub memory: Memory,
}

impl StepModel for Conditioned<'_> {
    fn next_log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        self.model.next_log_probs(&self.memory, prefixes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens without BOS or EOS.
    pub tokens: Vec<TokenId>,
    /// Sum of token log-probabilities, EOS included when `finished`.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Scored length: generated tokens plus EOS when finished.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// `log_prob / ((5 + length) / 6)^alpha`.
    pub fn normalized(&self, alpha: f64) -> f64 {
        length_normalized(self.log_prob, self.length(), alpha)
    }
}

pub fn length_normalized(log_prob: f64, length: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return log_prob;
    }
    log_prob / ((5.0 + length as f64) / 6.0).powf(alpha)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Most probable token at every step until EOS or `max_len` tokens.
pub fn greedy_search(m: &impl StepModel, max_len: usize) -> Result<Hypothesis> {
    if max_len < 1 {
        return Err(Error::Usage("max_len must be at least 1".into()));
    }
    let mut prefix = vec![BOS_ID];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let lp = m.next_log_probs(std::slice::from_ref(&prefix))?.remove(0);
        let next = argmax(&lp);
        log_prob += lp[next];
        if next as TokenId == EOS_ID {
            return Ok(Hypothesis {
                tokens: prefix[1..].to_vec(),
                log_prob,
                finished: true,
            });
        }
        prefix.push(next as TokenId);
    }
    Ok(Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob,
        finished: false,
    })
}

/// Beam search returning the hypothesis with the best length-normalized
/// score. Each step keeps the `beam_size` best extensions of the live
/// hypotheses; extensions ending in EOS retire into the finished pool and
/// shrink the beam. The greedy path is always a candidate, so the result
/// never scores below greedy decoding.
pub fn beam_search(m: &impl StepModel, beam_size: usize, max_len: usize, alpha: f64) -> Result<Hypothesis> {
    if beam_size < 1 {
        return Err(Error::Usage("beam_size must be at least 1".into()));
    }
    let greedy = greedy_search(m, max_len)?;
    if beam_size == 1 {
        return Ok(greedy);
    }
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(vec![BOS_ID], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut width = beam_size;
    for step in 0..max_len {
        let prefixes: Vec<Vec<TokenId>> = live.iter().map(|(p, _)| p.clone()).collect();
        let lps = m.next_log_probs(&prefixes)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, lp) in lps.iter().enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                cands.push((live[h].1 + l, h, tok));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::new();
        for &(score, h, tok) in cands.iter().take(width) {
            if tok as TokenId == EOS_ID {
                finished.push(Hypothesis {
                    tokens: live[h].0[1..].to_vec(),
                    log_prob: score,
                    finished: true,
                });
                width -= 1;
            } else {
                let mut p = live[h].0.clone();
                p.push(tok as TokenId);
                next.push((p, score));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if step + 1 == max_len {
            finished.extend(live.iter().map(|(p, s)| Hypothesis {
                tokens: p[1..].to_vec(),
                log_prob: *s,
                finished: false,
            }));
        }
    }
    finished.push(greedy);
    let mut best = finished.remove(0);
    for h in finished {
        if h.normalized(alpha) > best.normalized(alpha) {
            best = h;
        }
    }
    Ok(best)
}

fn condition<'a>(model: &'a TransformerModel, src: &[TokenId]) -> Result<(Conditioned<'a>, usize)> {
    let memory = model.encode(src)?;
    Ok((Conditioned { model, memory }, model.config().max_seq_len))
}

/// Greedy translation of framed source ids. Output excludes BOS/EOS.
pub fn greedy_decode(model: &TransformerModel, src: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    if max_len < 1 {
        return Err(Error::Usage("max_len must be at least 1".into()));
    }
    let (c, cap) = condition(model, src)?;
    Ok(greedy_search(&c, max_len.min(cap))?.tokens)
}

/// Beam translation of framed source ids. Output excludes BOS/EOS.
pub fn beam_decode(
    model: &TransformerModel,
    src: &[TokenId],
    beam_size: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<TokenId>> {
    if max_len < 1 || beam_size < 1 {
        return Err(Error::Usage("beam_size and max_len must be at least 1".into()));
    }
    let (c, cap) = condition(model, src)?;
    Ok(beam_search(&c, beam_size, max_len.min(cap), length_penalty)?.tokens)
}
