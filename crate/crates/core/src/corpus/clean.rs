use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};

const DEFAULT_ENGLISH: &str = include_str!("../../data/en_contractions.tsv");

/// Contraction → expansion rules, one `contraction<TAB>expansion` per line.
/// Blank lines and `#` comments are ignored. Matching is case-insensitive;
/// a capitalized contraction yields a capitalized expansion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContractionTable {
    rules: HashMap<String, String>,
}

impl ContractionTable {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_ENGLISH).expect("bundled contraction table is well formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once('\t')
                .filter(|(f, t)| !f.trim().is_empty() && !t.trim().is_empty())
                .ok_or_else(|| Error::Format(format!("contraction table line {}: expected `from<TAB>to`", i + 1)))?;
            rules.insert(from.trim().to_lowercase(), to.trim().to_string());
        }
        let table = Self { rules };
        if let Some(k) = table.rules.values().flat_map(|v| v.split_whitespace()).find(|w| table.rules.contains_key(&w.to_lowercase())) {
            return Err(Error::Format(format!("contraction expansion contains contraction {k:?}")));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn expand_word(&self, word: &str) -> Option<String> {
        let is_edge = |c: char| !c.is_alphanumeric() && c != '\'' && c != '’';
        let core_start = word.find(|c: char| !is_edge(c))?;
        let core_end = word.rfind(|c: char| !is_edge(c)).map(|i| i + word[i..].chars().next().unwrap().len_utf8())?;
        let core = &word[core_start..core_end];
        let key = core.replace('’', "'").to_lowercase();
        let expansion = self.rules.get(&key)?;
        let expansion = if core.chars().next().is_some_and(char::is_uppercase) {
            let mut chars = expansion.chars();
            chars
                .next()
                .map(|c| c.to_uppercase().chain(chars).collect())
                .unwrap_or_default()
        } else {
            expansion.clone()
        };
        Some(format!("{}{}{}", &word[..core_start], expansion, &word[core_end..]))
    }

    /// Expands contractions and collapses whitespace to single spaces.
    pub fn apply(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|w| self.expand_word(w).unwrap_or_else(|| w.to_string()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleaningConfig {
    pub src_contractions: ContractionTable,
    pub tgt_contractions: ContractionTable,
    /// Pairs with more whitespace tokens than this on either side are dropped.
    pub max_len: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            src_contractions: ContractionTable::english(),
            tgt_contractions: ContractionTable::empty(),
            max_len: 80,
        }
    }
}

/// Contraction expansion, whitespace normalization, length filtering and
/// exact-duplicate removal (first occurrence kept, order preserved).
/// Pairs with an empty side are dropped.
pub fn clean(raw: &ParallelCorpus, rules: &CleaningConfig) -> ParallelCorpus {
    let mut seen: HashSet<SentencePair> = HashSet::new();
    let mut pairs = Vec::new();
    let (mut too_long, mut empty, mut duplicates) = (0usize, 0usize, 0usize);
    for p in &raw.pairs {
        let src = rules.src_contractions.apply(&p.src);
        let tgt = rules.tgt_contractions.apply(&p.tgt);
        if src.is_empty() || tgt.is_empty() {
            empty += 1;
            continue;
        }
        if src.split(' ').count() > rules.max_len || tgt.split(' ').count() > rules.max_len {
            too_long += 1;
            continue;
        }
        let pair = SentencePair { src, tgt };
        if seen.contains(&pair) {
            duplicates += 1;
            continue;
        }
        seen.insert(pair.clone());
        pairs.push(pair);
    }
    let mut out = ParallelCorpus::new(raw.direction.clone(), pairs);
    out.notes = raw.notes.clone();
    if too_long + empty + duplicates > 0 {
        out.notes.push(format!(
            "clean: dropped {too_long} overlong, {empty} empty, {duplicates} duplicate pairs"
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::Direction;
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            Direction::new("en", "zu"),
            pairs.iter().map(|(s, t)| SentencePair::new(*s, *t)).collect(),
        )
    }

    #[test]
    fn expands_and_deduplicates() {
        let raw = corpus(&[("don't go", "ungahambi"), ("don't go", "ungahambi")]);
        let out = clean(&raw, &CleaningConfig::default());
        assert_eq!(out.pairs, vec![SentencePair::new("do not go", "ungahambi")]);
    }

    #[test]
    fn clean_corpus_is_unchanged() {
        let raw = corpus(&[("we go home", "siya ekhaya"), ("thank you", "ngiyabonga")]);
        assert_eq!(clean(&raw, &CleaningConfig::default()).pairs, raw.pairs);
    }

    #[test]
    fn overlong_pairs_are_dropped() {
        let long = vec!["word"; 200].join(" ");
        let raw = corpus(&[(&long, "x"), ("short", "y")]);
        let out = clean(&raw, &CleaningConfig::default());
        assert_eq!(out.pairs, vec![SentencePair::new("short", "y")]);
    }

    #[test]
    fn capitalization_and_punctuation_survive_expansion() {
        let t = ContractionTable::english();
        assert_eq!(t.apply("Don't   stop, it's fine."), "Do not stop, it is fine.");
        assert_eq!(t.apply("(won't)"), "(will not)");
    }

    #[test]
    fn table_parse_errors() {
        assert!(ContractionTable::parse("no tab here\n").is_err());
        assert!(ContractionTable::parse("a\tb\nb\tc\n").is_err());
        assert!(ContractionTable::parse("# comment\n\ncan't\tcannot\n").unwrap().len() == 1);
    }
}
