//! Tokenization and vocabulary.
//!
//! The tokenizer is deliberately simple: lowercase, split on Unicode
//! whitespace, strip leading/trailing non-alphanumeric characters from
//! each token (interior punctuation like `u.s.a` survives), drop empty
//! tokens.

pub mod index;

pub use index::{Bm25Params, InvertedIndex, Posting};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved vocabulary ids.
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

const RESERVED: [&str; 3] = ["<pad>", "[cls]", "<unk>"];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if t.is_empty() {
                None
            } else {
                Some(t.to_lowercase())
            }
        })
        .collect()
}

/// Word/id mapping with reserved ids 0 = pad, 1 = [CLS], 2 = unk, plus
/// per-word corpus and document frequencies.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
    freq: Vec<u64>,
    doc_freq: Vec<u32>,
}

impl Vocab {
    /// Deterministic build: words with corpus frequency >= `min_freq`
    /// get ids in descending-frequency order, ties broken
    /// lexicographically, after the reserved ids.
    pub fn build<'a>(docs: impl Iterator<Item = &'a [String]>, min_freq: u64) -> Result<Vocab> {
        if min_freq < 1 {
            return Err(Error::contract("min_freq must be >= 1".to_string()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        let mut df: HashMap<&str, u32> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = Vec::new();
            for tok in doc {
                *freq.entry(tok).or_insert(0) += 1;
                if !seen.contains(&tok.as_str()) {
                    seen.push(tok);
                }
            }
            for tok in seen {
                *df.entry(tok).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = freq
            .iter()
            .filter(|(_, f)| **f >= min_freq)
            .map(|(w, f)| (*w, *f))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocab::reserved_only();
        for (w, f) in entries {
            let id = vocab.words.len() as u32;
            vocab.ids.insert(w.to_string(), id);
            vocab.words.push(w.to_string());
            vocab.freq.push(f);
            vocab.doc_freq.push(df[w]);
        }
        Ok(vocab)
    }

    fn reserved_only() -> Vocab {
        let words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, ids, freq: vec![0; 3], doc_freq: vec![0; 3] }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq[id as usize]
    }

    /// Map tokens to ids, unknown words to `UNK_ID`.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.ids.get(t).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Tokenize, map to ids, and truncate to `max_len`.
    pub fn encode_text(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids = self.encode(&tokenize(text));
        ids.truncate(max_len);
        ids
    }

    /// Stable digest of the id/word mapping, recorded in checkpoints so a
    /// model is never served against the wrong vocabulary.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, w) in self.words.iter().enumerate() {
            hasher.update(format!("{i}\t{w}\n").as_bytes());
        }
        hex_digest(hasher)
    }

    /// Plain-text format: a `word <TAB> freq <TAB> doc_freq` line per id,
    /// reserved rows first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..self.words.len() {
            writeln!(w, "{}\t{}\t{}", self.words[i], self.freq[i], self.doc_freq[i])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let file = File::open(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: format!("cannot open: {e}"),
        })?;
        let mut words = Vec::new();
        let mut freq = Vec::new();
        let mut doc_freq = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected word<TAB>freq<TAB>doc_freq".to_string(),
                });
            }
            let parse = |s: &str, what: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("bad {what} {s:?}"),
                })
            };
            words.push(cols[0].to_string());
            freq.push(parse(cols[1], "frequency")?);
            doc_freq.push(parse(cols[2], "doc frequency")? as u32);
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if words.get(i).map(|s| s.as_str()) != Some(*expected) {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: format!("reserved row {i} must be {expected:?}"),
                });
            }
        }
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocab { words, ids, freq, doc_freq })
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
