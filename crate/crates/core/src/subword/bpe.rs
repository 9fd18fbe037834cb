use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::{tag_token, SubwordModel, END_OF_WORD, RESERVED};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeOptions {
    /// Total vocabulary budget, reserved ids and tags included.
    pub vocab_size: usize,
    pub lowercase: bool,
    /// Language codes that receive an atomic `<2xx>` tag token.
    pub languages: Vec<String>,
}

impl Default for BpeOptions {
    fn default() -> Self {
        Self {
            vocab_size: 8000,
            lowercase: false,
            languages: Vec::new(),
        }
    }
}

type Pair = (u32, u32);

struct Trainer {
    symbols: Vec<String>,
    lookup: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    pair_counts: HashMap<Pair, i64>,
    occurrences: HashMap<Pair, BTreeSet<usize>>,
}

impl Trainer {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.lookup.get(&s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.lookup.insert(s.clone(), id);
        self.symbols.push(s);
        id
    }

    fn add_word_pairs(&mut self, w: usize, sign: i64) {
        let (syms, freq) = &self.words[w];
        for win in syms.windows(2) {
            let pair = (win[0], win[1]);
            *self.pair_counts.entry(pair).or_insert(0) += sign * *freq as i64;
            if sign > 0 {
                self.occurrences.entry(pair).or_default().insert(w);
            }
        }
    }

    /// Highest-count pair, ties broken by lexicographic (left, right) order.
    fn best_pair(&self, banned: &HashSet<Pair>) -> Option<(Pair, i64)> {
        let mut best: Option<(Pair, i64)> = None;
        for (&pair, &count) in &self.pair_counts {
            if count <= 0 || banned.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (&self.symbols[pair.0 as usize], &self.symbols[pair.1 as usize])
                                < (&self.symbols[bp.0 as usize], &self.symbols[bp.1 as usize]))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        best
    }

    fn apply_merge(&mut self, pair: Pair, product: u32) {
        let affected = self.occurrences.remove(&pair).unwrap_or_default();
        for w in affected {
            if !self.words[w].0.windows(2).any(|x| (x[0], x[1]) == pair) {
                continue;
            }
            self.add_word_pairs(w, -1);
            let syms = &self.words[w].0;
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    merged.push(product);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            self.words[w].0 = merged;
            self.add_word_pairs(w, 1);
        }
        self.pair_counts.remove(&pair);
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

impl SubwordModel {
    /// Greedy BPE: repeatedly merge the most frequent adjacent symbol pair
    /// until the vocabulary budget is met or no pair occurs at least twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], opts: &BpeOptions) -> Result<Self> {
        let mut languages = opts.languages.clone();
        languages.sort();
        languages.dedup();
        if languages.iter().any(|l| l.is_empty() || l.contains(char::is_whitespace)) {
            return Err(Error::Usage("language codes must be non-empty and whitespace-free".into()));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in corpus {
            let line = line.as_ref();
            let line = if opts.lowercase {
                line.to_lowercase()
            } else {
                line.to_string()
            };
            for w in line.split_whitespace() {
                *counts.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Usage("cannot train a subword model on an empty corpus".into()));
        }

        let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
        let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        vocab.extend(languages.iter().map(|l| tag_token(l)));
        for c in &alphabet {
            vocab.push(c.to_string());
            vocab.push(format!("{c}{END_OF_WORD}"));
        }
        if opts.vocab_size <= vocab.len() {
            return Err(Error::Usage(format!(
                "vocab_size {} must exceed alphabet plus reserved entries ({})",
                opts.vocab_size,
                vocab.len()
            )));
        }
        let forbidden: HashSet<String> = vocab[..RESERVED.len() + languages.len()].iter().cloned().collect();
        let mut in_vocab: HashSet<String> = vocab.iter().cloned().collect();

        let mut trainer = Trainer {
            symbols: Vec::new(),
            lookup: HashMap::new(),
            words: Vec::new(),
            pair_counts: HashMap::new(),
            occurrences: HashMap::new(),
        };
        for (word, freq) in &counts {
            let syms = initial_symbols(word)
                .into_iter()
                .map(|s| trainer.intern(s))
                .collect();
            trainer.words.push((syms, *freq));
        }
        for w in 0..trainer.words.len() {
            trainer.add_word_pairs(w, 1);
        }

        let mut merges = Vec::new();
        let mut banned = HashSet::new();
        while vocab.len() < opts.vocab_size {
            let Some((pair, count)) = trainer.best_pair(&banned) else { break };
            if count < 2 {
                break;
            }
            let left = trainer.symbols[pair.0 as usize].clone();
            let right = trainer.symbols[pair.1 as usize].clone();
            let product = format!("{left}{right}");
            if forbidden.contains(&product) {
                banned.insert(pair);
                continue;
            }
            let pid = trainer.intern(product.clone());
            trainer.apply_merge(pair, pid);
            merges.push((left, right));
            if in_vocab.insert(product.clone()) {
                vocab.push(product);
            }
        }
        SubwordModel::assemble(merges, vocab, languages, opts.lowercase)
    }
}
