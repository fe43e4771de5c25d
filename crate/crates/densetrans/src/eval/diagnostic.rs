//! Layer-wise discrimination diagnostic.
//!
//! For triples `(q, q+, q-)` drawn from the judgments, the diagnostic
//! reports, per layer `l`, the mean of
//! `|ln cos(q_l, q+_l) - ln cos(q_l, q-_l)|` over the layer-`l` `[CLS]`
//! vectors. Cosines are clamped to `[1e-6, 1]` before the log (the log
//! is undefined at or below zero). Larger values mean the layer's
//! representation separates relevant from irrelevant pairs more sharply.

use super::Qrels;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const COSINE_CLAMP_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

/// One seeded negative per `(q, q+)` pair, uniform over the corpus ids
/// that are neither the query nor judged relevant to it. Judgments whose
/// query or positive is missing from the corpus are skipped.
pub fn sample_triples(qrels: &Qrels, corpus: &Corpus, rng: &mut SplitMix64) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (query, rels) in qrels.iter() {
        if corpus.ordinal(query).is_none() {
            continue;
        }
        for positive in rels {
            if corpus.ordinal(positive).is_none() {
                continue;
            }
            let negative = draw_negative(query, rels, corpus, rng)?;
            out.push(Triple {
                query: query.clone(),
                positive: positive.clone(),
                negative,
            });
        }
    }
    Ok(out)
}

fn draw_negative(
    query: &str,
    rels: &std::collections::BTreeSet<String>,
    corpus: &Corpus,
    rng: &mut SplitMix64,
) -> Result<String> {
    let n = corpus.len();
    for _ in 0..64 {
        let cand = corpus.id(rng.below(n) as u32);
        if cand != query && !rels.contains(cand) {
            return Ok(cand.to_string());
        }
    }
    // Dense judgments: fall back to the first eligible id in order.
    for ord in 0..n as u32 {
        let cand = corpus.id(ord);
        if cand != query && !rels.contains(cand) {
            return Ok(cand.to_string());
        }
    }
    Err(Error::contract(format!(
        "no non-relevant candidate exists for query {query:?}"
    )))
}

fn clamped_ln_cos(a: &[f64], b: &[f64]) -> Result<f64> {
    let c = crate::encoder::cosine_score(a, b)?.value;
    Ok(c.clamp(COSINE_CLAMP_MIN, 1.0).ln())
}

/// Mean per-layer separation over the triples. `layer_reps` returns the
/// `[CLS]` vector of every layer (`E0..EN`) for a question id; all
/// questions must agree on the layer count.
pub fn discrimination_diagnostic(
    layer_reps: &mut dyn FnMut(&str) -> Result<Vec<Vec<f64>>>,
    triples: &[Triple],
) -> Result<Vec<f64>> {
    if triples.is_empty() {
        return Err(Error::contract("diagnostic needs at least one triple".to_string()));
    }
    let mut sums: Vec<f64> = Vec::new();
    for triple in triples {
        let q = layer_reps(&triple.query)?;
        let p = layer_reps(&triple.positive)?;
        let n = layer_reps(&triple.negative)?;
        if sums.is_empty() {
            sums = vec![0.0; q.len()];
        }
        if q.len() != sums.len() || p.len() != sums.len() || n.len() != sums.len() {
            return Err(Error::contract(format!(
                "layer counts disagree: {} vs {} vs {} (expected {})",
                q.len(),
                p.len(),
                n.len(),
                sums.len()
            )));
        }
        for l in 0..sums.len() {
            let pos = clamped_ln_cos(&q[l], &p[l])?;
            let neg = clamped_ln_cos(&q[l], &n[l])?;
            sums[l] += (pos - neg).abs();
        }
    }
    let count = triples.len() as f64;
    Ok(sums.into_iter().map(|s| s / count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn reps_fn(
        map: HashMap<String, Vec<Vec<f64>>>,
    ) -> impl FnMut(&str) -> Result<Vec<Vec<f64>>> {
        move |id: &str| {
            map.get(id)
                .cloned()
                .ok_or_else(|| Error::UnknownId(id.to_string()))
        }
    }

    #[test]
    fn identical_positive_contributes_ln_of_negative_cosine() {
        // q == q+ at every layer: cos = 1, ln = 0; the triple contributes
        // |0 - ln c(q, q-)|.
        let q = vec![vec![1.0, 0.0]];
        let neg = vec![vec![0.8, 0.6]]; // cos(q, neg) = 0.8
        let mut map = HashMap::new();
        map.insert("q".to_string(), q.clone());
        map.insert("p".to_string(), q.clone());
        map.insert("n".to_string(), neg);
        let triples = vec![Triple {
            query: "q".into(),
            positive: "p".into(),
            negative: "n".into(),
        }];
        let vals = discrimination_diagnostic(&mut reps_fn(map), &triples).unwrap();
        assert!((vals[0] - (-(0.8f64.ln())).abs()).abs() < 1e-12);
    }

    #[test]
    fn all_identical_contributes_zero() {
        let r = vec![vec![0.3, 0.4], vec![1.0, 2.0]];
        let mut map = HashMap::new();
        for id in ["q", "p", "n"] {
            map.insert(id.to_string(), r.clone());
        }
        let triples = vec![Triple { query: "q".into(), positive: "p".into(), negative: "n".into() }];
        let vals = discrimination_diagnostic(&mut reps_fn(map), &triples).unwrap();
        assert_eq!(vals, vec![0.0, 0.0]);
    }

    #[test]
    fn negative_cosines_are_clamped() {
        let mut map = HashMap::new();
        map.insert("q".to_string(), vec![vec![1.0, 0.0]]);
        map.insert("p".to_string(), vec![vec![1.0, 0.0]]);
        map.insert("n".to_string(), vec![vec![-1.0, 0.0]]); // cos = -1
        let triples = vec![Triple { query: "q".into(), positive: "p".into(), negative: "n".into() }];
        let vals = discrimination_diagnostic(&mut reps_fn(map), &triples).unwrap();
        assert!((vals[0] - (-(COSINE_CLAMP_MIN.ln()))).abs() < 1e-9);
    }

    #[test]
    fn empty_triples_is_contract_error() {
        let mut f = reps_fn(HashMap::new());
        assert!(discrimination_diagnostic(&mut f, &[]).is_err());
    }

    #[test]
    fn sampled_negatives_avoid_relevant_set() {
        let corpus = Corpus::new(
            (0..20)
                .map(|i| (format!("q{i:02}"), format!("text {i}")))
                .collect(),
        )
        .unwrap();
        let mut qrels = Qrels::new();
        qrels.add("q00", "q01");
        qrels.add("q00", "q02");
        qrels.add("q05", "q06");
        let mut rng = SplitMix64::new(3);
        let triples = sample_triples(&qrels, &corpus, &mut rng).unwrap();
        assert_eq!(triples.len(), 3);
        for t in &triples {
            assert_ne!(t.negative, t.query);
            assert!(!qrels.is_relevant(&t.query, &t.negative));
        }
        // Seeded: same draw on rerun.
        let again = sample_triples(&qrels, &corpus, &mut SplitMix64::new(3)).unwrap();
        assert_eq!(triples, again);
    }
}
