//! Ranking metrics: Recall@K, MRR@K, MAP@K, NDCG@K over binary relevance.

pub mod diagnostic;
pub mod runfile;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::data::{read_two_column_tsv, write_two_column_tsv};
use crate::error::{Error, Result};

/// Binary relevance judgments: query id to the set of relevant ids.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    pub fn add(&mut self, query_id: &str, relevant_id: &str) {
        self.map
            .entry(query_id.to_string())
            .or_default()
            .insert(relevant_id.to_string());
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (q, r) in read_two_column_tsv(path)? {
            qrels.add(&q, &r);
        }
        Ok(qrels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for (q, rels) in &self.map {
            for r in rels {
                rows.push((q.clone(), r.clone()));
            }
        }
        write_two_column_tsv(path, &rows)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id)
    }

    /// Relevant set for a query that must be judged; missing or empty
    /// judgments are a caller error.
    pub fn require(&self, query_id: &str) -> Result<&BTreeSet<String>> {
        match self.map.get(query_id) {
            Some(set) if !set.is_empty() => Ok(set),
            _ => Err(Error::contract(format!(
                "query {query_id:?} has no relevance judgments"
            ))),
        }
    }

    pub fn is_relevant(&self, query_id: &str, candidate: &str) -> bool {
        self.map
            .get(query_id)
            .is_some_and(|set| set.contains(candidate))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.map.iter()
    }
}

/// A per-query ranking: `(question_id, score)` strictly ordered by
/// descending score, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, mut items: Vec<(String, f64)>) -> Result<Self> {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for w in items.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateId(w[0].0.clone()));
            }
        }
        // The sort leaves equal ids adjacent only when scores tie; catch
        // the general case too.
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (id, _) in &items {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(RankedList { query_id: query_id.into(), items })
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Drop an id if present (used to exclude a query from its own
    /// candidate list) and truncate to `k`.
    pub fn without_id_truncated(mut self, id: &str, k: usize) -> RankedList {
        self.items.retain(|(i, _)| i != id);
        self.items.truncate(k);
        self
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::contract("metric cutoff k must be >= 1".to_string()));
    }
    Ok(())
}

/// Fraction of the relevant set retrieved within the top `k`.
pub fn recall_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = qrels.require(&ranked.query_id)?;
    let hits = ranked
        .items
        .iter()
        .take(k)
        .filter(|(id, _)| rel.contains(id))
        .count();
    Ok(hits as f64 / rel.len() as f64)
}

/// Reciprocal rank of the first relevant item within the top `k`, or 0.
pub fn mrr_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = qrels.require(&ranked.query_id)?;
    for (i, (id, _)) in ranked.items.iter().take(k).enumerate() {
        if rel.contains(id) {
            return Ok(1.0 / (i + 1) as f64);
        }
    }
    Ok(0.0)
}

/// Average precision at `k`, normalized by the full relevant-set size.
pub fn map_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = qrels.require(&ranked.query_id)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, (id, _)) in ranked.items.iter().take(k).enumerate() {
        if rel.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / rel.len() as f64)
}

/// NDCG at `k` with binary gains: DCG uses `1/log2(rank+1)`, the ideal
/// DCG places `min(|relevant|, k)` hits at the top.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = qrels.require(&ranked.query_id)?;
    let mut dcg = 0.0;
    for (i, (id, _)) in ranked.items.iter().take(k).enumerate() {
        if rel.contains(id) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let ideal_hits = rel.len().min(k);
    let mut idcg = 0.0;
    for i in 0..ideal_hits {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Recall,
    Mrr,
    Map,
    Ndcg,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Recall => write!(f, "recall"),
            MetricKind::Mrr => write!(f, "mrr"),
            MetricKind::Map => write!(f, "map"),
            MetricKind::Ndcg => write!(f, "ndcg"),
        }
    }
}

/// One metric at one cutoff, e.g. `recall@100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
}

impl std::fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.kind, self.k)
    }
}

impl MetricSpec {
    pub fn compute(&self, ranked: &RankedList, qrels: &Qrels) -> Result<f64> {
        match self.kind {
            MetricKind::Recall => recall_at_k(ranked, qrels, self.k),
            MetricKind::Mrr => mrr_at_k(ranked, qrels, self.k),
            MetricKind::Map => map_at_k(ranked, qrels, self.k),
            MetricKind::Ndcg => ndcg_at_k(ranked, qrels, self.k),
        }
    }
}

/// The reporting defaults: recall@100, mrr@100, map@100, ndcg@10.
pub fn default_metric_specs() -> Vec<MetricSpec> {
    vec![
        MetricSpec { kind: MetricKind::Recall, k: 100 },
        MetricSpec { kind: MetricKind::Mrr, k: 100 },
        MetricSpec { kind: MetricKind::Map, k: 100 },
        MetricSpec { kind: MetricKind::Ndcg, k: 10 },
    ]
}

/// Per-query and mean metric values for a configured spec set.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub specs: Vec<MetricSpec>,
    /// `(query_id, values)` with one value per spec, in input order.
    pub per_query: Vec<(String, Vec<f64>)>,
    pub means: Vec<f64>,
}

impl MetricReport {
    pub fn mean_of(&self, spec: MetricSpec) -> Option<f64> {
        self.specs.iter().position(|s| *s == spec).map(|i| self.means[i])
    }

    /// One `query_id <TAB> metric <TAB> value` row per query and spec.
    pub fn write_per_query_tsv(&self, path: &Path) -> Result<()> {
        use std::io::Write as _;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (qid, vals) in &self.per_query {
            for (spec, v) in self.specs.iter().zip(vals) {
                writeln!(w, "{qid}\t{spec}\t{v}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Summary block: `metric <TAB> mean` rows.
    pub fn write_summary_tsv(&self, path: &Path) -> Result<()> {
        use std::io::Write as _;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (spec, mean) in self.specs.iter().zip(&self.means) {
            writeln!(w, "{spec}\t{mean}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate every ranking against the judgments. Every query in `lists`
/// must be judged.
pub fn evaluate(lists: &[RankedList], qrels: &Qrels, specs: &[MetricSpec]) -> Result<MetricReport> {
    if lists.is_empty() {
        return Err(Error::contract("no rankings to evaluate".to_string()));
    }
    let mut per_query = Vec::with_capacity(lists.len());
    let mut sums = vec![0.0; specs.len()];
    for list in lists {
        let mut vals = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let v = spec.compute(list, qrels)?;
            sums[i] += v;
            vals.push(v);
        }
        per_query.push((list.query_id.clone(), vals));
    }
    let n = lists.len() as f64;
    let means = sums.into_iter().map(|s| s / n).collect();
    Ok(MetricReport { specs: specs.to_vec(), per_query, means })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrels_of(pairs: &[(&str, &str)]) -> Qrels {
        let mut q = Qrels::new();
        for (a, b) in pairs {
            q.add(a, b);
        }
        q
    }

    fn ranking(qid: &str, ids: &[&str]) -> RankedList {
        let n = ids.len();
        let items = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), (n - i) as f64))
            .collect();
        RankedList::new(qid, items).unwrap()
    }

    #[test]
    fn recall_examples() {
        let qrels = qrels_of(&[("q", "a"), ("q", "b"), ("q", "c"), ("q", "d")]);
        let r = ranking("q", &["a", "x", "b", "c", "y"]);
        assert_eq!(recall_at_k(&r, &qrels, 100).unwrap(), 0.75);
        let all = ranking("q", &["a", "b", "c", "d"]);
        assert_eq!(recall_at_k(&all, &qrels, 10).unwrap(), 1.0);
        let none = ranking("q", &["x", "y"]);
        assert_eq!(recall_at_k(&none, &qrels, 10).unwrap(), 0.0);
    }

    #[test]
    fn mrr_examples() {
        let qrels = qrels_of(&[("q", "a")]);
        assert_eq!(mrr_at_k(&ranking("q", &["a", "x"]), &qrels, 10).unwrap(), 1.0);
        assert_eq!(
            mrr_at_k(&ranking("q", &["x", "y", "a"]), &qrels, 10).unwrap(),
            1.0 / 3.0
        );
        // First relevant at rank k+1 contributes 0.
        assert_eq!(mrr_at_k(&ranking("q", &["x", "y", "a"]), &qrels, 2).unwrap(), 0.0);
    }

    #[test]
    fn map_examples() {
        let qrels = qrels_of(&[("q", "a")]);
        assert_eq!(map_at_k(&ranking("q", &["a", "x"]), &qrels, 10).unwrap(), 1.0);

        let qrels2 = qrels_of(&[("q", "a"), ("q", "b")]);
        let r = ranking("q", &["a", "x", "b", "y"]);
        let expect = 0.5 * (1.0 / 1.0 + 2.0 / 3.0); // = 5/6
        assert!((map_at_k(&r, &qrels2, 10).unwrap() - expect).abs() < 1e-12);
        assert!((map_at_k(&r, &qrels2, 10).unwrap() - 5.0 / 6.0).abs() < 1e-12);

        assert_eq!(map_at_k(&ranking("q", &["x", "y"]), &qrels2, 10).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let qrels = qrels_of(&[("q", "a")]);
        assert_eq!(ndcg_at_k(&ranking("q", &["a", "x"]), &qrels, 10).unwrap(), 1.0);
        // Single relevant at rank 3: dcg = 1/log2(4) = 0.5, idcg = 1.
        let v = ndcg_at_k(&ranking("q", &["x", "y", "a"]), &qrels, 10).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&ranking("q", &["x", "y"]), &qrels, 10).unwrap(), 0.0);
    }

    #[test]
    fn metrics_use_order_not_score_magnitudes() {
        let qrels = qrels_of(&[("q", "a"), ("q", "b")]);
        let r1 = RankedList::new(
            "q",
            vec![("a".into(), 100.0), ("x".into(), 50.0), ("b".into(), 25.0)],
        )
        .unwrap();
        // Same order, scores squashed through a monotone map.
        let r2 = RankedList::new(
            "q",
            vec![("a".into(), 0.3), ("x".into(), 0.2), ("b".into(), 0.1)],
        )
        .unwrap();
        for spec in default_metric_specs() {
            assert_eq!(
                spec.compute(&r1, &qrels).unwrap(),
                spec.compute(&r2, &qrels).unwrap()
            );
        }
    }

    #[test]
    fn ranked_list_sorts_and_breaks_ties_by_id() {
        let r = RankedList::new(
            "q",
            vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)],
        )
        .unwrap();
        let ids: Vec<&str> = r.items().iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
        assert!(RankedList::new("q", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
    }

    #[test]
    fn missing_judgments_is_contract_error() {
        let qrels = qrels_of(&[("other", "a")]);
        let err = recall_at_k(&ranking("q", &["a"]), &qrels, 10).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
