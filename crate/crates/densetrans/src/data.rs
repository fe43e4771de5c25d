//! Corpus and pair files.
//!
//! Questions arrive as UTF-8 TSV, one `question_id <TAB> text` per line.
//! Training pairs and relevance judgments use the same two-column shape
//! (`query_id <TAB> positive_id` / `query_id <TAB> relevant_id`).
//! Internally questions are addressed by dense ordinals into the corpus;
//! ranking tie-breaks use the lexicographic rank of the id string so they
//! are independent of file order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Read a two-column TSV file; errors carry the 1-based line number.
pub fn read_two_column_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("cannot open: {e}"),
    })?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let a = parts.next().unwrap_or_default();
        let b = parts.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected two tab-separated columns".to_string(),
        })?;
        if a.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "empty id column".to_string(),
            });
        }
        rows.push((a.to_string(), b.to_string()));
    }
    Ok(rows)
}

pub fn write_two_column_tsv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (a, b) in rows {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// The question collection: id strings, texts, and the ordinal mapping.
#[derive(Debug, Clone)]
pub struct Corpus {
    ids: Vec<String>,
    texts: Vec<String>,
    by_id: HashMap<String, u32>,
    /// `id_rank[ordinal]` = position of the id in lexicographic order.
    id_rank: Vec<u32>,
}

impl Corpus {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(entries.len());
        let mut texts = Vec::with_capacity(entries.len());
        let mut by_id = HashMap::with_capacity(entries.len());
        for (id, text) in entries {
            if by_id.insert(id.clone(), ids.len() as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            texts.push(text);
        }
        let mut order: Vec<u32> = (0..ids.len() as u32).collect();
        order.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut id_rank = vec![0u32; ids.len()];
        for (rank, ord) in order.into_iter().enumerate() {
            id_rank[ord as usize] = rank as u32;
        }
        Ok(Corpus { ids, texts, by_id, id_rank })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Corpus::new(read_two_column_tsv(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<(String, String)> = self
            .ids
            .iter()
            .zip(&self.texts)
            .map(|(i, t)| (i.clone(), t.clone()))
            .collect();
        write_two_column_tsv(path, &rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, ordinal: u32) -> &str {
        &self.ids[ordinal as usize]
    }

    pub fn text(&self, ordinal: u32) -> &str {
        &self.texts[ordinal as usize]
    }

    pub fn ordinal(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    pub fn require_ordinal(&self, id: &str) -> Result<u32> {
        self.ordinal(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Lexicographic rank of the id string; the deterministic tie-break
    /// for equal scores.
    pub fn id_rank(&self, ordinal: u32) -> u32 {
        self.id_rank[ordinal as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, &str)> {
        self.ids
            .iter()
            .zip(&self.texts)
            .enumerate()
            .map(|(i, (id, text))| (i as u32, id.as_str(), text.as_str()))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// `(query_id, positive_id)` training or dev pairs, in file order.
#[derive(Debug, Clone, Default)]
pub struct Pairs(pub Vec<(String, String)>);

impl Pairs {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Pairs(read_two_column_tsv(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_two_column_tsv(path, &self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let err = Corpus::new(vec![
            ("a".into(), "x".into()),
            ("a".into(), "y".into()),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }

    #[test]
    fn id_rank_is_lexicographic() {
        let c = Corpus::new(vec![
            ("q2".into(), "".into()),
            ("q10".into(), "".into()),
            ("q1".into(), "".into()),
        ])
        .unwrap();
        // lexicographic: q1 < q10 < q2
        assert_eq!(c.id_rank(c.ordinal("q1").unwrap()), 0);
        assert_eq!(c.id_rank(c.ordinal("q10").unwrap()), 1);
        assert_eq!(c.id_rank(c.ordinal("q2").unwrap()), 2);
    }

    #[test]
    fn malformed_tsv_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "q1\tok line\nno tab here\n").unwrap();
        let err = read_two_column_tsv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn tsv_roundtrip_preserves_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let c = Corpus::new(vec![
            ("q1".into(), "what is rust".into()),
            ("q2".into(), "how do birds fly".into()),
        ])
        .unwrap();
        c.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.text(back.ordinal("q2").unwrap()), "how do birds fly");
    }
}
