//! Seeded synthetic parallel corpora for sanity checks and small-scale
//! replications: a copy task and families of word-for-word related
//! languages with controlled vocabulary overlap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Direction, ParallelCorpus, SentencePair};

/// Pronounceable pseudo-words: `n` distinct strings from consonant-vowel
/// syllables, drawn with `rng`.
pub fn pseudo_words(n: usize, syllables: usize, rng: &mut impl Rng) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..syllables)
            .flat_map(|_| [C[rng.random_range(0..C.len())] as char, V[rng.random_range(0..V.len())] as char])
            .collect();
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

/// Sentences of `min_len..=max_len` words drawn uniformly from `lexicon`.
pub fn random_sentences(lexicon: &[String], n: usize, min_len: usize, max_len: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len);
            (0..len).map(|_| rng.random_range(0..lexicon.len())).collect()
        })
        .collect()
}

fn render(lexicon: &[String], ids: &[usize]) -> String {
    ids.iter().map(|&i| lexicon[i].as_str()).collect::<Vec<_>>().join(" ")
}

/// Target identical to source; distinct sentences only.
pub fn copy_corpus(n: usize, lexicon_size: usize, min_len: usize, max_len: usize, seed: u64) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = pseudo_words(lexicon_size, 1, &mut rng);
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let s = render(&lexicon, &random_sentences(&lexicon, 1, min_len, max_len, &mut rng)[0]);
        if seen.insert(s.clone()) {
            pairs.push(SentencePair::new(s.clone(), s));
        }
    }
    ParallelCorpus::new(Direction::new("src", "copy"), pairs)
}

/// A family of languages over one shared concept inventory. Sentences are
/// sequences of concepts; each language realizes a concept as one word, so
/// translation is word-for-word.
#[derive(Clone, Debug)]
pub struct LanguageFamily {
    pub names: Vec<String>,
    /// `lexicons[lang][concept]`
    pub lexicons: Vec<Vec<String>>,
}

impl LanguageFamily {
    /// `names[0]` gets an independent lexicon. Every later language copies
    /// the word of its `related` parent for a `shared` fraction of concepts
    /// and coins fresh words for the rest; `related[i] = None` makes it
    /// independent too.
    pub fn generate(names: &[&str], related: &[Option<usize>], concepts: usize, shared: f64, seed: u64) -> Self {
        assert_eq!(names.len(), related.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = pseudo_words(concepts * names.len(), 2, &mut rng);
        let mut fresh = all.into_iter();
        let mut lexicons: Vec<Vec<String>> = Vec::new();
        for parent in related {
            let own: Vec<String> = fresh.by_ref().take(concepts).collect();
            let lex = match parent {
                None => own,
                Some(p) => {
                    let mut idx: Vec<usize> = (0..concepts).collect();
                    idx.shuffle(&mut rng);
                    let keep = (shared * concepts as f64).round() as usize;
                    let mut lex = own;
                    for &c in &idx[..keep] {
                        lex[c] = lexicons[*p][c].clone();
                    }
                    lex
                }
            };
            lexicons.push(lex);
        }
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            lexicons,
        }
    }

    fn index(&self, lang: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == lang)
            .unwrap_or_else(|| panic!("unknown language {lang}"))
    }

    /// `n` distinct sentence pairs for `src → tgt`.
    pub fn corpus(&self, src: &str, tgt: &str, n: usize, min_len: usize, max_len: usize, seed: u64) -> ParallelCorpus {
        let (s, t) = (self.index(src), self.index(tgt));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let concepts = self.lexicons[0].len();
        let mut seen = std::collections::HashSet::new();
        let mut pairs = Vec::with_capacity(n);
        while pairs.len() < n {
            let len = rng.random_range(min_len..=max_len);
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..concepts)).collect();
            if seen.insert(ids.clone()) {
                pairs.push(SentencePair::new(render(&self.lexicons[s], &ids), render(&self.lexicons[t], &ids)));
            }
        }
        ParallelCorpus::new(Direction::new(src, tgt), pairs)
    }

    /// Fraction of concepts realized by the same word in both languages.
    pub fn overlap(&self, a: &str, b: &str) -> f64 {
        let (a, b) = (&self.lexicons[self.index(a)], &self.lexicons[self.index(b)]);
        a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
    }
}
