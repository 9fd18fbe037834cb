//! Byte-pair-encoding subword tokenizer with reserved ids and atomic
//! target-language tags.
//!
//! Words are split on whitespace and carry an end-of-word marker on their
//! last symbol, so decoding restores single-space-separated text exactly.
//! Ids 0–3 are always PAD, UNK, BOS and EOS; language tags such as `<2zu>`
//! follow, then the character alphabet, then merge products in merge order.

mod bpe;
mod io;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use bpe::BpeOptions;

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const BOS_ID: TokenId = 2;
pub const EOS_ID: TokenId = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

pub(crate) const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];
pub(crate) const END_OF_WORD: &str = "</w>";

/// Tag token string for a language code, e.g. `zu` → `<2zu>`.
pub fn tag_token(lang: &str) -> String {
    format!("<2{lang}>")
}

/// Trained, immutable subword model.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: Vec<String>,
    ids: HashMap<String, TokenId>,
    languages: Vec<String>,
    lowercase: bool,
}

impl SubwordModel {
    pub(crate) fn assemble(
        merges: Vec<(String, String)>,
        vocab: Vec<String>,
        languages: Vec<String>,
        lowercase: bool,
    ) -> Result<Self> {
        let n_special = RESERVED.len() + languages.len();
        if vocab.len() < n_special {
            return Err(Error::Format("vocabulary shorter than its reserved entries".into()));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if vocab[i] != *r {
                return Err(Error::Format(format!("id {i} must be {r}, found {}", vocab[i])));
            }
        }
        for (k, lang) in languages.iter().enumerate() {
            let want = tag_token(lang);
            if vocab[RESERVED.len() + k] != want {
                return Err(Error::Format(format!(
                    "id {} must be {want}, found {}",
                    RESERVED.len() + k,
                    vocab[RESERVED.len() + k]
                )));
            }
        }
        let mut ids = HashMap::new();
        for (i, tok) in vocab.iter().enumerate().skip(n_special) {
            if vocab[..n_special].contains(tok) || ids.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {tok}")));
            }
        }
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(r, m)| (m.clone(), r))
            .collect();
        Ok(Self {
            merges,
            ranks,
            vocab,
            ids,
            languages,
            lowercase,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Id of a regular (non-reserved, non-tag) token.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn tag_id(&self, lang: &str) -> Option<TokenId> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .map(|k| (RESERVED.len() + k) as TokenId)
    }

    pub fn is_tag(&self, id: TokenId) -> bool {
        let id = id as usize;
        id >= RESERVED.len() && id < RESERVED.len() + self.languages.len()
    }

    /// Splits one word into symbols by applying merges in rank order.
    fn segment(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut symbols: Vec<String> = chars
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i + 1 == chars.len() {
                    format!("{c}{END_OF_WORD}")
                } else {
                    c.to_string()
                }
            })
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    fn normalize<'a>(&self, text: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            std::borrow::Cow::Owned(text.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(text)
        }
    }

    /// Subword ids for `text`. Characters outside the training alphabet map
    /// to UNK. No BOS/EOS framing and never a language tag.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let text = self.normalize(text);
        text.split_whitespace()
            .flat_map(|w| self.segment(w))
            .map(|s| self.ids.get(&s).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Subword strings for `text` (unknown symbols are kept as-is).
    pub fn encode_pieces(&self, text: &str) -> Vec<String> {
        let text = self.normalize(text);
        text.split_whitespace().flat_map(|w| self.segment(w)).collect()
    }

    /// Text for a token sequence. Reserved ids and tags are dropped; UNK is
    /// rendered as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == UNK_ID {
                out.push_str(UNK_TOKEN);
                continue;
            }
            if (id as usize) < RESERVED.len() || self.is_tag(id) {
                continue;
            }
            let Some(tok) = self.token(id) else {
                out.push_str(UNK_TOKEN);
                continue;
            };
            match tok.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(tok),
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        out
    }

    /// Prepends the target-language tag to an untagged sequence.
    pub fn tag_source(&self, ids: &[TokenId], target_lang: &str) -> Result<Vec<TokenId>> {
        let tag = self.tag_id(target_lang).ok_or_else(|| {
            Error::Usage(format!(
                "language {target_lang:?} has no registered tag (known: {})",
                self.languages.join(", ")
            ))
        })?;
        if ids.first().is_some_and(|&first| self.is_tag(first)) {
            return Err(Error::Usage("sequence is already tagged".into()));
        }
        let mut out = Vec::with_capacity(ids.len() + 1);
        out.push(tag);
        out.extend_from_slice(ids);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(corpus: &[&str], vocab_size: usize, langs: &[&str]) -> SubwordModel {
        let opts = BpeOptions {
            vocab_size,
            lowercase: false,
            languages: langs.iter().map(|s| s.to_string()).collect(),
        };
        SubwordModel::train(corpus, &opts).unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // Alphabet: a, a</w>, b, b</w>; 4 reserved.
        let m = model(&["aaab", "aaab"], 4 + 4 + 1, &[]);
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn budget_below_alphabet_is_rejected() {
        let opts = BpeOptions {
            vocab_size: 5,
            ..BpeOptions::default()
        };
        assert!(matches!(SubwordModel::train(&["abcdef"], &opts), Err(Error::Usage(_))));
        assert!(matches!(
            SubwordModel::train::<&str>(&[], &BpeOptions::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn encode_edge_cases() {
        let m = model(&["hello world", "hold the door"], 60, &[]);
        assert!(m.encode("").is_empty());
        assert_eq!(m.decode(&m.encode("hello the world")), "hello the world");
        assert!(m.encode("hello zebra").contains(&UNK_ID));
    }

    #[test]
    fn tag_source_contract() {
        let m = model(&["sawubona mhlaba"], 40, &["zu", "xh"]);
        let zu = m.tag_id("zu").unwrap();
        let (a, b) = (m.id("s").unwrap(), m.id("a</w>").unwrap());
        assert_eq!(m.tag_source(&[a, b], "zu").unwrap(), vec![zu, a, b]);
        let tagged = m.tag_source(&[a, b], "xh").unwrap();
        assert!(matches!(m.tag_source(&tagged, "zu"), Err(Error::Usage(_))));
        assert!(matches!(m.tag_source(&[a], "fr"), Err(Error::Usage(_))));
    }

    #[test]
    fn tag_strings_in_text_are_not_tag_ids() {
        let m = model(&["<2zu> x <2zu>y", "<2zu>", "<2zu><2zu>"], 80, &["zu"]);
        let zu = m.tag_id("zu").unwrap();
        assert!(!m.encode("<2zu> hello <2zu>").contains(&zu));
        assert!(m.vocab.iter().filter(|t| *t == "<2zu>").count() == 1);
    }

    #[test]
    fn decode_skips_framing_and_tags() {
        let m = model(&["ab ab"], 20, &["en"]);
        let mut ids = vec![BOS_ID, m.tag_id("en").unwrap()];
        ids.extend(m.encode("ab"));
        ids.push(EOS_ID);
        assert_eq!(m.decode(&ids), "ab");
    }
}
