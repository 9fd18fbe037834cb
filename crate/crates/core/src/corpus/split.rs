use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_lines, stats, write_lines, Direction, ParallelCorpus};
use crate::error::{Error, Result};

/// Smallest corpus that can be split.
pub const MIN_SPLIT_SIZE: usize = 20;

/// Train/valid/test partition sizes for `n` pairs at a 14:3:3 ratio.
///
/// Train takes `round(0.7·n)` (halves round up); the remainder is shared
/// as evenly as possible, valid taking the extra pair when it is odd.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (7 * n + 5) / 10;
    let rest = n - train;
    let valid = rest.div_ceil(2);
    (train, valid, rest - valid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCorpus {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub seed: u64,
    /// train:valid:test
    pub ratio: (u32, u32, u32),
}

impl SplitCorpus {
    pub fn direction(&self) -> &Direction {
        &self.train.direction
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

/// Seeded shuffle followed by a 14:3:3 partition.
pub fn split(corpus: &ParallelCorpus, seed: u64) -> Result<SplitCorpus> {
    let n = corpus.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::Usage(format!(
            "corpus of {n} pairs is too small to split (need at least {MIN_SPLIT_SIZE})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, valid, _) = split_counts(n);
    let part = |idx: &[usize]| {
        let mut c = ParallelCorpus::new(
            corpus.direction.clone(),
            idx.iter().map(|&i| corpus.pairs[i].clone()).collect(),
        );
        c.notes = corpus.notes.clone();
        c
    };
    Ok(SplitCorpus {
        train: part(&order[..train]),
        valid: part(&order[train..train + valid]),
        test: part(&order[train + valid..]),
        seed,
        ratio: (14, 3, 3),
    })
}

const META_FILE: &str = "split.meta";
const PARTS: [&str; 3] = ["train", "valid", "test"];

/// Writes `{train,valid,test}.{src,tgt}` plus `split.meta` (seed, counts,
/// languages, word-type statistics) into `dir`.
pub fn write_split(split: &SplitCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, part) in PARTS.iter().zip([&split.train, &split.valid, &split.test]) {
        write_lines(&dir.join(format!("{name}.src")), part.sources())?;
        write_lines(&dir.join(format!("{name}.tgt")), part.targets())?;
    }
    let mut all = split.train.clone();
    all.pairs.extend(split.valid.pairs.iter().cloned());
    all.pairs.extend(split.test.pairs.iter().cloned());
    let s = stats(&all);
    let meta = [
        ("format", "split-v1".to_string()),
        ("src_lang", split.direction().src.clone()),
        ("tgt_lang", split.direction().tgt.clone()),
        ("seed", split.seed.to_string()),
        ("ratio", format!("{}:{}:{}", split.ratio.0, split.ratio.1, split.ratio.2)),
        ("total", split.total().to_string()),
        ("train", split.train.len().to_string()),
        ("valid", split.valid.len().to_string()),
        ("test", split.test.len().to_string()),
        ("source_types", s.source_types.to_string()),
        ("target_types", s.target_types.to_string()),
    ];
    let text: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let path = dir.join(META_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a directory produced by [`write_split`].
pub fn read_split(dir: &Path) -> Result<SplitCorpus> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let field = |k: &str| {
        meta.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("{}: missing `{k}`", path.display())))
    };
    let direction = Direction::new(field("src_lang")?, field("tgt_lang")?);
    let seed = field("seed")?
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad seed", path.display())))?;
    let mut parts = Vec::new();
    for name in PARTS {
        let src = read_lines(&dir.join(format!("{name}.src")))?;
        let tgt = read_lines(&dir.join(format!("{name}.tgt")))?;
        let part = ParallelCorpus::from_sides(direction.clone(), src, tgt)?;
        let expected: usize = field(name)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad count for {name}", path.display())))?;
        if part.len() != expected {
            return Err(Error::Format(format!(
                "{}: {name} has {} pairs, metadata says {expected}",
                dir.display(),
                part.len()
            )));
        }
        parts.push(part);
    }
    let test = parts.pop().unwrap();
    let valid = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(SplitCorpus {
        train,
        valid,
        test,
        seed,
        ratio: (14, 3, 3),
    })
}

#[cfg(test)]
mod tests {
    use super::super::SentencePair;
    use super::*;

    fn numbered(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            Direction::new("en", "zu"),
            (0..n)
                .map(|i| SentencePair::new(format!("s{i}"), format!("t{i}")))
                .collect(),
        )
    }

    #[test]
    fn reference_partition_sizes() {
        assert_eq!(split_counts(30_253), (21_177, 4_538, 4_538));
        assert_eq!(split_counts(77_500), (54_250, 11_625, 11_625));
        assert_eq!(split_counts(20), (14, 3, 3));
    }

    #[test]
    fn too_small_is_usage_error() {
        assert!(matches!(split(&numbered(19), 1), Err(Error::Usage(_))));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(&numbered(40), 7).unwrap();
        write_split(&s, dir.path()).unwrap();
        assert_eq!(read_split(dir.path()).unwrap(), s);
    }
}
