//! Training-example construction: hard negatives mined from BM25 top-N
//! pools, batches whose other members serve as in-batch negatives.

use std::collections::{HashMap, HashSet};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::lexical::{tokenize, Bm25Params, InvertedIndex};
use crate::rng::SplitMix64;

/// One training unit: a query with its labeled positive and `J` mined
/// hard negatives (fewer when the pool is small). Ordinals index the
/// corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub query: u32,
    pub positive: u32,
    pub hard_negatives: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// BM25 pool depth N; 0 disables hard negatives (in-batch only).
    pub pool_depth: usize,
    /// Hard negatives per example J.
    pub negatives_per_example: usize,
    pub seed: u64,
    /// Redraw negatives from the static pool every epoch (default), or
    /// freeze the epoch-0 draw.
    pub resample_each_epoch: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            pool_depth: 100,
            negatives_per_example: 2,
            seed: 0,
            resample_each_epoch: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_depth == 0 && self.negatives_per_example != 0 {
            return Err(Error::contract(
                "pool_depth 0 (in-batch only) requires negatives_per_example 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// BM25 top-N for the query's own text, minus every judged positive of
/// the query and the query itself, in rank order.
pub fn mine_pool(
    index: &InvertedIndex,
    corpus: &Corpus,
    qrels: &Qrels,
    query_id: &str,
    n: usize,
) -> Result<Vec<u32>> {
    let query_ord = corpus.require_ordinal(query_id)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let tokens = tokenize(corpus.text(query_ord));
    let hits = index.search(&tokens, n, &Bm25Params::default())?;
    let mut pool = Vec::with_capacity(hits.len());
    for (doc, _) in hits {
        let id = index.doc_id(doc);
        if id == query_id || qrels.is_relevant(query_id, id) {
            continue;
        }
        pool.push(corpus.require_ordinal(id)?);
    }
    Ok(pool)
}

/// Mine the pool for every distinct query id, in first-appearance order.
pub fn mine_pools(
    index: &InvertedIndex,
    corpus: &Corpus,
    qrels: &Qrels,
    query_ids: &[String],
    n: usize,
) -> Result<HashMap<u32, Vec<u32>>> {
    let mut pools = HashMap::new();
    for qid in query_ids {
        let ord = corpus.require_ordinal(qid)?;
        if let std::collections::hash_map::Entry::Vacant(e) = pools.entry(ord) {
            e.insert(mine_pool(index, corpus, qrels, qid, n)?);
        }
    }
    Ok(pools)
}

/// Uniform sample without replacement; the whole pool (shuffled) when it
/// holds fewer than `j` candidates.
pub fn sample_negatives(pool: &[u32], j: usize, rng: &mut SplitMix64) -> Vec<u32> {
    rng.sample_indices(pool.len(), j)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// One example of a batch with its resolved candidate list; the labeled
/// positive sits at `label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchExample {
    pub query: u32,
    pub candidates: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub examples: Vec<BatchExample>,
}

/// Assemble candidate sets: each example sees its own positive and hard
/// negatives plus every other batch member's positive and hard
/// negatives. Candidates are de-duplicated by id; any candidate that is
/// a judged positive of the example (other than the labeled one) or the
/// query itself is removed.
///
/// `judged` maps a query ordinal to the ordinals of its judged positives.
pub fn build_batch(examples: &[TrainingExample], judged: &HashMap<u32, HashSet<u32>>) -> Batch {
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let own_judged = judged.get(&ex.query);
        let mut seen: HashSet<u32> = HashSet::new();
        let mut candidates = Vec::new();
        let push = |cand: u32, candidates: &mut Vec<u32>, seen: &mut HashSet<u32>| {
            if cand == ex.query {
                return;
            }
            if cand != ex.positive && own_judged.is_some_and(|j| j.contains(&cand)) {
                return; // false-negative guard
            }
            if seen.insert(cand) {
                candidates.push(cand);
            }
        };
        push(ex.positive, &mut candidates, &mut seen);
        for &h in &ex.hard_negatives {
            push(h, &mut candidates, &mut seen);
        }
        for (k, other) in examples.iter().enumerate() {
            if k == i {
                continue;
            }
            push(other.positive, &mut candidates, &mut seen);
            for &h in &other.hard_negatives {
                push(h, &mut candidates, &mut seen);
            }
        }
        let label = candidates
            .iter()
            .position(|c| *c == ex.positive)
            .expect("own positive survives the guards");
        out.push(BatchExample { query: ex.query, candidates, label });
    }
    Batch { examples: out }
}

/// The examples of one epoch: pairs shuffled, negatives drawn from the
/// static pools. The shuffle stream varies per epoch; the negative
/// stream follows `resample_each_epoch`.
pub fn epoch_examples(
    pairs: &[(u32, u32)],
    pools: &HashMap<u32, Vec<u32>>,
    config: &SamplerConfig,
    epoch: usize,
) -> Result<Vec<TrainingExample>> {
    config.validate()?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = SplitMix64::derive(config.seed, &format!("shuffle-epoch-{epoch}"));
    shuffle_rng.shuffle(&mut order);

    let neg_epoch = if config.resample_each_epoch { epoch } else { 0 };
    let mut neg_rng = SplitMix64::derive(config.seed, &format!("negatives-epoch-{neg_epoch}"));

    // Negatives are drawn in pair-index order so the draw stream is
    // independent of the shuffle.
    let mut negatives: Vec<Vec<u32>> = Vec::with_capacity(pairs.len());
    for (query, _) in pairs {
        let pool = pools.get(query).map(|p| p.as_slice()).unwrap_or(&[]);
        negatives.push(sample_negatives(pool, config.negatives_per_example, &mut neg_rng));
    }

    Ok(order
        .into_iter()
        .map(|i| TrainingExample {
            query: pairs[i].0,
            positive: pairs[i].1,
            hard_negatives: negatives[i].clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| (format!("q{i:03}"), format!("text {i} filler")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mine_pool_filters_positives_and_self() {
        let entries = vec![
            ("q1".to_string(), "red apple pie".to_string()),
            ("q2".to_string(), "red apple tart".to_string()),
            ("q3".to_string(), "red apple cake".to_string()),
            ("q4".to_string(), "blue sky".to_string()),
        ];
        let corpus = Corpus::new(entries).unwrap();
        let index = InvertedIndex::build(&corpus);
        let mut qrels = Qrels::new();
        qrels.add("q1", "q2");
        let pool = mine_pool(&index, &corpus, &qrels, "q1", 4).unwrap();
        let ids: Vec<&str> = pool.iter().map(|o| corpus.id(*o)).collect();
        assert!(!ids.contains(&"q1"), "never the query itself");
        assert!(!ids.contains(&"q2"), "judged positives filtered");
        assert!(ids.contains(&"q3"));
    }

    #[test]
    fn mine_pool_n_zero_is_empty() {
        let corpus = corpus(3);
        let index = InvertedIndex::build(&corpus);
        let qrels = Qrels::new();
        assert!(mine_pool(&index, &corpus, &qrels, "q001", 0).unwrap().is_empty());
        assert!(mine_pool(&index, &corpus, &qrels, "missing", 0).is_err());
    }

    #[test]
    fn all_positive_pool_is_empty() {
        let entries = vec![
            ("q1".to_string(), "green tea".to_string()),
            ("q2".to_string(), "green tea cup".to_string()),
        ];
        let corpus = Corpus::new(entries).unwrap();
        let index = InvertedIndex::build(&corpus);
        let mut qrels = Qrels::new();
        qrels.add("q1", "q2");
        // Top hits are q1 (self) and q2 (positive): nothing survives.
        let pool = mine_pool(&index, &corpus, &qrels, "q1", 2).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn sample_negatives_contracts() {
        let pool = vec![10, 11, 12, 13];
        let mut rng = SplitMix64::new(1);
        assert!(sample_negatives(&pool, 0, &mut rng).is_empty());

        // |pool| == j: exactly the pool, order randomized.
        let mut all = sample_negatives(&pool, 4, &mut SplitMix64::new(2));
        all.sort_unstable();
        assert_eq!(all, pool);

        // Short pools are returned whole, not resampled.
        let mut short = sample_negatives(&pool, 10, &mut SplitMix64::new(3));
        short.sort_unstable();
        assert_eq!(short, pool);

        // Fixed seed, fixed draw.
        let a = sample_negatives(&pool, 2, &mut SplitMix64::new(4));
        let b = sample_negatives(&pool, 2, &mut SplitMix64::new(4));
        assert_eq!(a, b);
    }

    #[test]
    fn batch_candidate_counts() {
        let judged = HashMap::new();
        // batch_size 1, J=2: 3 candidates.
        let one = vec![TrainingExample { query: 0, positive: 1, hard_negatives: vec![2, 3] }];
        let b = build_batch(&one, &judged);
        assert_eq!(b.examples[0].candidates.len(), 3);
        assert_eq!(b.examples[0].label, 0);

        // 4 examples, J=2, all distinct: 12 candidates each.
        let exs: Vec<TrainingExample> = (0..4)
            .map(|i| TrainingExample {
                query: 100 + i,
                positive: 10 * i,
                hard_negatives: vec![10 * i + 1, 10 * i + 2],
            })
            .collect();
        let b = build_batch(&exs, &judged);
        for ex in &b.examples {
            assert_eq!(ex.candidates.len(), 12);
        }
    }

    #[test]
    fn false_negative_guard_and_dedup() {
        let mut judged: HashMap<u32, HashSet<u32>> = HashMap::new();
        judged.insert(0, [1u32, 5u32].into_iter().collect());
        let exs = vec![
            TrainingExample { query: 0, positive: 1, hard_negatives: vec![2] },
            // Other example's positive (5) is a judged positive of query 0.
            TrainingExample { query: 4, positive: 5, hard_negatives: vec![2] },
        ];
        let b = build_batch(&exs, &judged);
        let c0 = &b.examples[0].candidates;
        assert!(!c0.contains(&5), "judged positive of the query removed: {c0:?}");
        assert_eq!(c0.iter().filter(|c| **c == 2).count(), 1, "dedup by id");
        // The second example keeps query 0's positive as a negative.
        assert!(b.examples[1].candidates.contains(&1));
    }

    #[test]
    fn own_query_never_a_candidate() {
        let judged = HashMap::new();
        let exs = vec![
            TrainingExample { query: 7, positive: 1, hard_negatives: vec![] },
            // Query 7 shows up as another example's positive.
            TrainingExample { query: 2, positive: 7, hard_negatives: vec![] },
        ];
        let b = build_batch(&exs, &judged);
        assert!(!b.examples[0].candidates.contains(&7));
        assert!(b.examples[1].candidates.contains(&1));
    }

    #[test]
    fn epoch_stream_is_reproducible() {
        let pairs: Vec<(u32, u32)> = (0..20).map(|i| (i, i + 100)).collect();
        let mut pools = HashMap::new();
        for i in 0..20u32 {
            pools.insert(i, vec![200 + i, 300 + i, 400 + i]);
        }
        let cfg = SamplerConfig { pool_depth: 100, negatives_per_example: 2, seed: 9, resample_each_epoch: true };
        let a = epoch_examples(&pairs, &pools, &cfg, 0).unwrap();
        let b = epoch_examples(&pairs, &pools, &cfg, 0).unwrap();
        assert_eq!(a, b);
        let c = epoch_examples(&pairs, &pools, &cfg, 1).unwrap();
        assert_ne!(a, c, "epochs differ");

        // Frozen negatives: same draw across epochs, different order.
        let frozen = SamplerConfig { resample_each_epoch: false, ..cfg };
        let e0 = epoch_examples(&pairs, &pools, &frozen, 0).unwrap();
        let e1 = epoch_examples(&pairs, &pools, &frozen, 1).unwrap();
        let by_query = |v: &[TrainingExample]| -> HashMap<u32, Vec<u32>> {
            v.iter().map(|e| (e.query, e.hard_negatives.clone())).collect()
        };
        assert_eq!(by_query(&e0), by_query(&e1), "negatives frozen across epochs");
    }

    #[test]
    fn pool_depth_zero_requires_no_negatives() {
        let cfg = SamplerConfig { pool_depth: 0, negatives_per_example: 2, seed: 0, resample_each_epoch: true };
        assert!(cfg.validate().is_err());
        let ok = SamplerConfig { pool_depth: 0, negatives_per_example: 0, seed: 0, resample_each_epoch: true };
        assert!(ok.validate().is_ok());
    }
}
