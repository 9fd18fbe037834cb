//! Text serialization.
//!
//! ```text
//! subword-bpe v1 pad=0 unk=1 bos=2 eos=3 lowercase=0 tags=en,zu
//! merges <count>
//! <left> <right>
//! ...
//! vocab <count>
//! <token>\t<id>
//! ...
//! ```
//! Header fields are tab-separated. Output is canonical: reading and
//! re-writing a file yields identical bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{tag_token, SubwordModel, BOS_ID, EOS_ID, PAD_ID, RESERVED, UNK_ID};
use crate::error::{Error, Result};

const MAGIC: &str = "subword-bpe";
const VERSION: &str = "v1";

impl SubwordModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{MAGIC}\t{VERSION}\tpad={PAD_ID}\tunk={UNK_ID}\tbos={BOS_ID}\teos={EOS_ID}\tlowercase={}\ttags={}\n",
            u8::from(self.lowercase),
            self.languages.join(",")
        ));
        out.push_str(&format!("merges\t{}\n", self.merges.len()));
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        out.push_str(&format!("vocab\t{}\n", self.vocab.len()));
        for (i, tok) in self.vocab.iter().enumerate() {
            out.push_str(&format!("{tok}\t{i}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("subword model: {msg}"));
        let mut lines = text.split('\n');
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 8 || fields[0] != MAGIC {
            return Err(bad(format!("unrecognized header {header:?}")));
        }
        if fields[1] != VERSION {
            return Err(bad(format!("unsupported version {}", fields[1])));
        }
        let expected = [
            format!("pad={PAD_ID}"),
            format!("unk={UNK_ID}"),
            format!("bos={BOS_ID}"),
            format!("eos={EOS_ID}"),
        ];
        if fields[2..6] != expected {
            return Err(bad(format!("reserved ids must be 0-3, got {:?}", &fields[2..6])));
        }
        let lowercase = match fields[6] {
            "lowercase=0" => false,
            "lowercase=1" => true,
            other => return Err(bad(format!("bad field {other}"))),
        };
        let tags = fields[7]
            .strip_prefix("tags=")
            .ok_or_else(|| bad(format!("bad field {}", fields[7])))?;
        let languages: Vec<String> = if tags.is_empty() {
            Vec::new()
        } else {
            tags.split(',').map(str::to_string).collect()
        };

        let count = |line: Option<&str>, key: &str| -> Result<usize> {
            let line = line.ok_or_else(|| bad(format!("missing {key} section")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(format!("bad section header {line:?}")))
        };
        let n_merges = count(lines.next(), "merges")?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| bad("truncated merges".into()))?;
            let (l, r) = line
                .split_once(' ')
                .filter(|(l, r)| !l.is_empty() && !r.is_empty() && !r.contains(' '))
                .ok_or_else(|| bad(format!("bad merge line {line:?}")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let n_vocab = count(lines.next(), "vocab")?;
        let mut vocab = Vec::with_capacity(n_vocab);
        for i in 0..n_vocab {
            let line = lines.next().ok_or_else(|| bad("truncated vocabulary".into()))?;
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("bad vocab line {line:?}")))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(bad(format!("vocab ids must be dense and ordered, line {line:?}")));
            }
            vocab.push(tok.to_string());
        }
        if lines.next() != Some("") || lines.next().is_some() {
            return Err(bad("trailing content after vocabulary".into()));
        }
        if vocab.len() < RESERVED.len() + languages.len()
            || languages
                .iter()
                .enumerate()
                .any(|(k, l)| vocab[RESERVED.len() + k] != tag_token(l))
        {
            return Err(bad("tag entries do not match header".into()));
        }
        let model = SubwordModel::assemble(merges, vocab, languages, lowercase)?;
        if model.to_text() != text {
            return Err(bad("file is not in canonical form".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!(
            "{} is not valid UTF-8",
            path.display()
        )))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
