//! Parallel corpora: loading, cleaning, statistics and train/valid/test splits.

mod clean;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean, CleaningConfig, ContractionTable};
pub use split::{read_split, split, split_counts, write_split, SplitCorpus};

/// Translation direction `src → tgt`, written `src-tgt`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub src: String,
    pub tgt: String,
}

impl Direction {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains('-') => Ok(Self::new(a, b)),
            _ => Err(Error::Usage(format!("direction must look like `en-zu`, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
}

impl SentencePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

/// Aligned source/target sentences for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub direction: Direction,
    pub pairs: Vec<SentencePair>,
    pub notes: Vec<String>,
}

impl ParallelCorpus {
    pub fn new(direction: Direction, pairs: Vec<SentencePair>) -> Self {
        Self {
            direction,
            pairs,
            notes: Vec::new(),
        }
    }

    /// Zips two sides; unequal lengths are an alignment error.
    pub fn from_sides(direction: Direction, src: Vec<String>, tgt: Vec<String>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::Alignment(format!(
                "source has {} lines but target has {}; line {} has no counterpart",
                src.len(),
                tgt.len(),
                src.len().min(tgt.len()) + 1
            )));
        }
        let pairs = src
            .into_iter()
            .zip(tgt)
            .map(|(s, t)| SentencePair { src: s, tgt: t })
            .collect();
        Ok(Self::new(direction, pairs))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.src.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.tgt.as_str())
    }
}

/// Word-level statistics (distinct whitespace-token types per side).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub source_types: usize,
    pub target_types: usize,
}

pub fn stats(corpus: &ParallelCorpus) -> CorpusStats {
    let types = |side: &mut dyn Iterator<Item = &str>| {
        side.flat_map(str::split_whitespace).collect::<HashSet<_>>().len()
    };
    CorpusStats {
        sentences: corpus.len(),
        source_types: types(&mut corpus.sources()),
        target_types: types(&mut corpus.targets()),
    }
}

/// Reads a one-sentence-per-line UTF-8 file. CRLF and LF are equivalent;
/// trailing empty lines are dropped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Encoding {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        lines.push(line.to_string());
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    Ok(lines)
}

/// Pairs line `i` of `src_path` with line `i` of `tgt_path`.
pub fn load_parallel(src_path: &Path, tgt_path: &Path, direction: Direction) -> Result<ParallelCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    ParallelCorpus::from_sides(direction, src, tgt).map_err(|e| match e {
        Error::Alignment(msg) => Error::Alignment(format!(
            "{} vs {}: {msg}",
            src_path.display(),
            tgt_path.display()
        )),
        other => other,
    })
}

pub fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            Direction::new("en", "zu"),
            pairs.iter().map(|(s, t)| SentencePair::new(*s, *t)).collect(),
        )
    }

    #[test]
    fn stats_examples() {
        assert_eq!(stats(&corpus(&[])), CorpusStats::default());
        let c = corpus(&[("a b", "c"), ("b a", "c")]);
        assert_eq!(
            stats(&c),
            CorpusStats {
                sentences: 2,
                source_types: 2,
                target_types: 1
            }
        );
        let mut doubled = c.clone();
        doubled.pairs.extend(c.pairs.clone());
        let s = stats(&doubled);
        assert_eq!((s.sentences, s.source_types, s.target_types), (4, 2, 1));
    }

    #[test]
    fn load_parallel_files() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c, d) = (
            dir.path().join("a"),
            dir.path().join("b"),
            dir.path().join("c"),
            dir.path().join("d"),
        );
        fs::write(&a, "one\ntwo\nthree\n").unwrap();
        fs::write(&b, "uno\r\ndos\r\ntres\r\n\r\n").unwrap();
        fs::write(&c, "1\n2\n3\n4\n").unwrap();
        fs::write(&d, b"ok\n\xff\xfe\n").unwrap();
        let dir_ = Direction::new("en", "es");
        let pc = load_parallel(&a, &b, dir_.clone()).unwrap();
        assert_eq!(pc.len(), 3);
        assert_eq!(pc.pairs[1], SentencePair::new("two", "dos"));
        let lf = load_parallel(&a, &a, dir_.clone()).unwrap();
        let crlf_path = dir.path().join("crlf");
        fs::write(&crlf_path, "one\r\ntwo\r\nthree").unwrap();
        assert_eq!(load_parallel(&crlf_path, &crlf_path, dir_.clone()).unwrap(), lf);
        let err = load_parallel(&a, &c, dir_.clone()).unwrap_err();
        assert!(matches!(&err, Error::Alignment(m) if m.contains('3') && m.contains('4')));
        let err = load_parallel(&d, &d, dir_).unwrap_err();
        assert!(matches!(err, Error::Encoding { line: 2, .. }));
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("en-zu".parse::<Direction>().unwrap(), Direction::new("en", "zu"));
        assert!("enzu".parse::<Direction>().is_err());
        assert_eq!(Direction::new("xh", "zu").to_string(), "xh-zu");
    }
}
