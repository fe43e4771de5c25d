//! Inverted index and BM25 ranking.
//!
//! Scoring uses the non-negative smoothed idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))` and the usual saturation term
//! `tf (k1 + 1) / (tf + k1 (1 - b + b len/avglen))`. Questions matching
//! no query term score 0 and fill the tail of the ranking in ascending
//! id order, so a top-k request is always answered when the corpus is
//! large enough.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::tokenize;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::eval::RankedList;
use crate::tensor::serial::{
    read_str, read_u32, read_u64, read_u8, write_str, write_u32, write_u64, write_u8,
};

/// BM25 hyperparameters; the tuned defaults are `k1 = 3.44`, `b = 0.87`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 3.44, b: 0.87 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 0.0 {
            return Err(Error::contract(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::contract(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable term index over a question corpus.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    ids: Vec<String>,
    id_rank: Vec<u32>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> InvertedIndex {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (ord, _, text) in corpus.iter() {
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc: ord, tf: count });
            }
        }
        let total: u64 = doc_len.iter().map(|l| u64::from(*l)).sum();
        let avg_len = if doc_len.is_empty() { 0.0 } else { total as f64 / doc_len.len() as f64 };
        let ids: Vec<String> = corpus.ids().to_vec();
        let id_rank = compute_id_rank(&ids);
        InvertedIndex { ids, id_rank, doc_len, avg_len, postings }
    }

    pub fn num_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_len[doc as usize]
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.ids[doc as usize]
    }

    pub fn ordinal(&self, id: &str) -> Option<u32> {
        // Linear scan is fine for the sizes the tests use; search paths
        // go through Corpus which keeps a hash map.
        self.ids.iter().position(|x| x == id).map(|i| i as u32)
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(|v| v.as_slice())
    }

    /// BM25 scores for every document matching at least one query term.
    pub fn scores(&self, query_tokens: &[String], params: &Bm25Params) -> HashMap<u32, f64> {
        let n = self.num_docs() as f64;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query_tokens {
            let Some(postings) = self.postings.get(term) else { continue };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in postings {
                let tf = p.tf as f64;
                let len_norm = 1.0 - params.b + params.b * self.doc_len[p.doc as usize] as f64 / self.avg_len;
                let contrib = idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
                *acc.entry(p.doc).or_insert(0.0) += contrib;
            }
        }
        acc
    }

    /// Top-k doc ordinals with scores, ties broken by ascending id;
    /// zero-score documents backfill the tail when fewer than `k` match.
    pub fn search(&self, query_tokens: &[String], k: usize, params: &Bm25Params) -> Result<Vec<(u32, f64)>> {
        if k == 0 {
            return Err(Error::contract("search k must be >= 1".to_string()));
        }
        params.validate()?;
        let scores = self.scores(query_tokens, params);
        let mut matched: Vec<(u32, f64)> = scores.into_iter().collect();
        matched.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.id_rank[a.0 as usize].cmp(&self.id_rank[b.0 as usize]))
        });
        if matched.len() < k && matched.len() < self.num_docs() {
            let in_matched: std::collections::HashSet<u32> = matched.iter().map(|(d, _)| *d).collect();
            let mut rest: Vec<u32> = (0..self.num_docs() as u32)
                .filter(|d| !in_matched.contains(d))
                .collect();
            rest.sort_by_key(|d| self.id_rank[*d as usize]);
            let need = (k - matched.len()).min(rest.len());
            matched.extend(rest.into_iter().take(need).map(|d| (d, 0.0)));
        }
        matched.truncate(k);
        Ok(matched)
    }

    /// [`InvertedIndex::search`] packaged as a [`RankedList`].
    pub fn search_ranked(
        &self,
        query_id: &str,
        query_tokens: &[String],
        k: usize,
        params: &Bm25Params,
    ) -> Result<RankedList> {
        let hits = self.search(query_tokens, k, params)?;
        let items = hits
            .into_iter()
            .map(|(d, s)| (self.ids[d as usize].clone(), s))
            .collect();
        RankedList::new(query_id, items)
    }

    // ---- binary file format ----
    //
    // magic b"DTIX", version u8, doc count u32, avg_len f64 bits u64,
    // ids (count × str), doc lengths (count × u32), term count u32,
    // terms: str, posting count u32, postings (doc u32, tf u32).

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"DTIX")?;
        write_u8(&mut w, 1)?;
        write_u32(&mut w, self.ids.len() as u32)?;
        write_u64(&mut w, self.avg_len.to_bits())?;
        for id in &self.ids {
            write_str(&mut w, id)?;
        }
        for len in &self.doc_len {
            write_u32(&mut w, *len)?;
        }
        write_u32(&mut w, self.postings.len() as u32)?;
        for (term, postings) in &self.postings {
            write_str(&mut w, term)?;
            write_u32(&mut w, postings.len() as u32)?;
            for p in postings {
                write_u32(&mut w, p.doc)?;
                write_u32(&mut w, p.tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<InvertedIndex> {
        let fname = path.display().to_string();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::Format {
            path: fname.clone(),
            msg: format!("cannot open: {e}"),
        })?);
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut r, &mut magic)?;
        if &magic != b"DTIX" {
            return Err(Error::Format { path: fname, msg: "bad magic, not a BM25 index".to_string() });
        }
        let version = read_u8(&mut r)?;
        if version != 1 {
            return Err(Error::Format { path: fname, msg: format!("unsupported index version {version}") });
        }
        let count = read_u32(&mut r)? as usize;
        let avg_len = f64::from_bits(read_u64(&mut r)?);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(read_str(&mut r)?);
        }
        let mut doc_len = Vec::with_capacity(count);
        for _ in 0..count {
            doc_len.push(read_u32(&mut r)?);
        }
        let term_count = read_u32(&mut r)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let term = read_str(&mut r)?;
            let n = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let doc = read_u32(&mut r)?;
                let tf = read_u32(&mut r)?;
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        // Stored average must agree with the stored lengths.
        let total: u64 = doc_len.iter().map(|l| u64::from(*l)).sum();
        let expect = if doc_len.is_empty() { 0.0 } else { total as f64 / doc_len.len() as f64 };
        if (avg_len - expect).abs() > 1e-9 {
            return Err(Error::Format {
                path: path.display().to_string(),
                msg: format!("stored avg length {avg_len} does not match lengths mean {expect}"),
            });
        }
        let id_rank = compute_id_rank(&ids);
        Ok(InvertedIndex { ids, id_rank, doc_len, avg_len, postings })
    }
}

fn compute_id_rank(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut rank = vec![0u32; ids.len()];
    for (r, ord) in order.into_iter().enumerate() {
        rank[ord as usize] = r as u32;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(entries: &[(&str, &str)]) -> Corpus {
        Corpus::new(entries.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn single_match_ranks_first_zero_scores_fill() {
        let c = corpus(&[("d1", "cat sat"), ("d2", "dog ran")]);
        let idx = InvertedIndex::build(&c);
        let hits = idx.search(&toks("cat"), 2, &Bm25Params::default()).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(idx.doc_id(hits[0].0), "d1");
        assert!(hits[0].1 > 0.0);
        assert_eq!(idx.doc_id(hits[1].0), "d2");
        assert_eq!(hits[1].1, 0.0);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let c = corpus(&[("d1", "cat sat"), ("d2", "dog ran")]);
        let idx = InvertedIndex::build(&c);
        let with = idx.scores(&toks("cat"), &Bm25Params::default());
        let with_junk = idx.scores(&toks("cat zebra"), &Bm25Params::default());
        assert_eq!(with, with_junk);
    }

    #[test]
    fn hand_evaluated_oracle_three_docs() {
        // Independent direct evaluation of the scoring formula.
        let c = corpus(&[
            ("d1", "apple apple banana"),
            ("d2", "apple cherry cherry cherry"),
            ("d3", "banana banana cherry"),
        ]);
        let idx = InvertedIndex::build(&c);
        let params = Bm25Params { k1: 1.2, b: 0.75 };
        let hits = idx.search(&toks("apple cherry"), 3, &params).unwrap();
        let scores: HashMap<&str, f64> = hits.iter().map(|(d, s)| (idx.doc_id(*d), *s)).collect();

        let n = 3.0f64;
        let avg = (3.0 + 4.0 + 3.0) / 3.0;
        let idf = |df: f64| (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let term = |tf: f64, len: f64| {
            tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * len / avg))
        };
        // apple: df 2; cherry: df 2.
        let d1 = idf(2.0) * term(2.0, 3.0);
        let d2 = idf(2.0) * term(1.0, 4.0) + idf(2.0) * term(3.0, 4.0);
        let d3 = idf(2.0) * term(1.0, 3.0);
        assert!((scores["d1"] - d1).abs() < 1e-9);
        assert!((scores["d2"] - d2).abs() < 1e-9);
        assert!((scores["d3"] - d3).abs() < 1e-9);
    }

    #[test]
    fn tie_break_is_ascending_id() {
        let c = corpus(&[("b", "same text"), ("a", "same text")]);
        let idx = InvertedIndex::build(&c);
        let hits = idx.search(&toks("same"), 2, &Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_id(hits[0].0), "a");
        assert_eq!(idx.doc_id(hits[1].0), "b");
    }

    #[test]
    fn k_zero_is_contract_error() {
        let c = corpus(&[("d1", "x")]);
        let idx = InvertedIndex::build(&c);
        assert!(idx.search(&toks("x"), 0, &Bm25Params::default()).is_err());
    }

    #[test]
    fn monotone_in_tf_for_fixed_length() {
        let c = corpus(&[("d1", "cat dog dog"), ("d2", "cat cat dog")]);
        let idx = InvertedIndex::build(&c);
        let s = idx.scores(&toks("cat"), &Bm25Params::default());
        let o1 = idx.ordinal("d1").unwrap();
        let o2 = idx.ordinal("d2").unwrap();
        assert!(s[&o2] > s[&o1]);
        assert!(s.values().all(|v| *v >= 0.0));
    }

    #[test]
    fn removing_query_term_never_increases_scores() {
        let c = corpus(&[
            ("d1", "alpha beta gamma"),
            ("d2", "beta beta delta"),
            ("d3", "gamma delta epsilon"),
        ]);
        let idx = InvertedIndex::build(&c);
        let full = idx.scores(&toks("alpha beta gamma"), &Bm25Params::default());
        let reduced = idx.scores(&toks("alpha gamma"), &Bm25Params::default());
        for d in 0..3u32 {
            let f = full.get(&d).copied().unwrap_or(0.0);
            let r = reduced.get(&d).copied().unwrap_or(0.0);
            assert!(r <= f + 1e-12, "doc {d}: {r} > {f}");
        }
    }

    #[test]
    fn index_file_roundtrip_reproduces_search() {
        let c = corpus(&[
            ("q1", "how to learn rust quickly"),
            ("q2", "best way to learn rust"),
            ("q3", "how do birds fly"),
        ]);
        let idx = InvertedIndex::build(&c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.idx");
        idx.save(&path).unwrap();
        let back = InvertedIndex::load(&path).unwrap();
        for q in ["learn rust", "birds", "how"] {
            let a = idx.search_ranked("q", &toks(q), 3, &Bm25Params::default()).unwrap();
            let b = back.search_ranked("q", &toks(q), 3, &Bm25Params::default()).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(idx.avg_len(), back.avg_len());
    }
}
