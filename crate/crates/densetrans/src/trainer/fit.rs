//! The training loop: epoch streams of sampled batches, Adam updates
//! under the warmup/decay schedule, periodic dev Recall@100 via exact
//! search, best-dev checkpoint retention.

use std::collections::{HashMap, HashSet};

use super::{batch_loss, lr_at, Adam, TrainConfig};
use crate::data::Corpus;
use crate::encoder::{Encoder, Mode};
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, Qrels, RankedList};
use crate::rng::SplitMix64;
use crate::sampling::{build_batch, epoch_examples, Batch};
use crate::tensor::{Real, Tensor};

pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    /// Per-ordinal token ids, already truncated to the encoder's max_len.
    pub token_ids: &'a [Vec<u32>],
    /// `(query, positive)` corpus ordinals.
    pub train_pairs: &'a [(u32, u32)],
    /// Dev query ordinals (positives resolved through qrels).
    pub dev_queries: &'a [u32],
    pub qrels: &'a Qrels,
    /// Mined hard-negative pools per train query ordinal.
    pub pools: &'a HashMap<u32, Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub dev_recall: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub total_steps: usize,
    pub best_step: usize,
    pub best_dev_recall: f64,
}

/// Encode a batch in training mode and compute its loss. Candidates are
/// encoded once per batch even when shared between examples, so in-batch
/// negatives reuse graph nodes.
pub fn batch_forward_loss<F: Real>(
    encoder: &Encoder<F>,
    batch: &Batch,
    token_ids: &[Vec<u32>],
    temperature: f64,
    mode: &mut Mode<'_>,
) -> Result<Tensor<F>> {
    let mut cand_cache: HashMap<u32, Tensor<F>> = HashMap::new();
    let mut queries = Vec::with_capacity(batch.examples.len());
    let mut cand_sets = Vec::with_capacity(batch.examples.len());
    let mut labels = Vec::with_capacity(batch.examples.len());
    for ex in &batch.examples {
        let q = encoder.forward(&token_ids[ex.query as usize], mode)?.pooled;
        let mut cands = Vec::with_capacity(ex.candidates.len());
        for &c in &ex.candidates {
            let enc = match cand_cache.get(&c) {
                Some(t) => t.clone(),
                None => {
                    let t = encoder.forward(&token_ids[c as usize], mode)?.pooled;
                    cand_cache.insert(c, t.clone());
                    t
                }
            };
            cands.push(enc);
        }
        queries.push(q);
        cand_sets.push(cands);
        labels.push(ex.label);
    }
    batch_loss(&queries, &cand_sets, &labels, temperature)
}

/// Mean dev Recall@100 under exact (brute-force cosine) search over the
/// whole corpus, with the query's own id excluded from its ranking.
pub fn dev_recall_at_100<F: Real>(
    encoder: &Encoder<F>,
    corpus: &Corpus,
    token_ids: &[Vec<u32>],
    dev_queries: &[u32],
    qrels: &Qrels,
) -> Result<f64> {
    let corpus_enc: Vec<Vec<F>> = (0..corpus.len())
        .map(|i| encoder.encode_eval(&token_ids[i]))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut seen: HashSet<u32> = HashSet::new();
    let mut count = 0usize;
    for &q in dev_queries {
        if !seen.insert(q) {
            continue;
        }
        let qenc = &corpus_enc[q as usize];
        let mut items = Vec::with_capacity(corpus.len());
        for (ord, id, _) in corpus.iter() {
            let score = crate::encoder::cosine_score(qenc, &corpus_enc[ord as usize])?;
            items.push((id.to_string(), score.value));
        }
        let ranked = RankedList::new(corpus.id(q), items)?
            .without_id_truncated(corpus.id(q), 100);
        total += recall_at_k(&ranked, qrels, 100)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::contract("no dev queries".to_string()));
    }
    Ok(total / count as f64)
}

/// Run the full optimization. On return the encoder holds the parameters
/// of the best dev evaluation (ties keep the earliest).
pub fn train<F: Real>(
    encoder: &Encoder<F>,
    config: &TrainConfig,
    inputs: &TrainInputs<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if inputs.train_pairs.is_empty() {
        return Err(Error::contract("training requires at least one pair".to_string()));
    }
    if inputs.token_ids.len() != inputs.corpus.len() {
        return Err(Error::contract(format!(
            "token ids cover {} questions, corpus has {}",
            inputs.token_ids.len(),
            inputs.corpus.len()
        )));
    }

    // Judged positives per query ordinal, for the false-negative guard.
    let mut judged: HashMap<u32, HashSet<u32>> = HashMap::new();
    for (qid, rels) in inputs.qrels.iter() {
        let Some(qord) = inputs.corpus.ordinal(qid) else { continue };
        let set: HashSet<u32> = rels
            .iter()
            .filter_map(|r| inputs.corpus.ordinal(r))
            .collect();
        judged.insert(qord, set);
    }

    let params = encoder.params.named();
    let mut adam = Adam::new(&params, config.beta1, config.beta2, config.eps);
    let mut dropout_rng = SplitMix64::derive(config.seed, "dropout");
    let sampler_cfg = config.sampler_config();

    let batches_per_epoch = inputs.train_pairs.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;

    let mut log = Vec::with_capacity(total_steps);
    let mut best: Option<(usize, f64, Vec<(String, Vec<F>)>)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let examples = epoch_examples(inputs.train_pairs, inputs.pools, &sampler_cfg, epoch)?;
        for chunk in examples.chunks(config.batch_size) {
            step += 1;
            let lr = lr_at(step, total_steps, config)?;
            let batch = build_batch(chunk, &judged);
            let loss = {
                let mut mode = Mode::Train { rng: &mut dropout_rng };
                batch_forward_loss(encoder, &batch, inputs.token_ids, config.temperature, &mut mode)?
            };
            loss.backward()?;
            let loss_value = loss.item()?.to_f64c();
            drop(loss);
            adam.step(&params, lr)?;

            let mut dev = None;
            if step % config.eval_every == 0 || step == total_steps {
                let recall = dev_recall_at_100(
                    encoder,
                    inputs.corpus,
                    inputs.token_ids,
                    inputs.dev_queries,
                    inputs.qrels,
                )?;
                dev = Some(recall);
                let improved = best.as_ref().map_or(true, |(_, b, _)| recall > *b);
                if improved {
                    best = Some((step, recall, encoder.params.snapshot()));
                }
            }
            log.push(LogRow { step, lr, loss: loss_value, dev_recall: dev });
        }
    }

    let (best_step, best_dev_recall, snapshot) =
        best.expect("at least the final step evaluates dev");
    encoder.params.restore(&snapshot)?;
    Ok(TrainOutcome { log, total_steps, best_step, best_dev_recall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Connectivity, EncoderConfig};
    use crate::lexical::{tokenize, Vocab};

    /// Tiny two-cluster corpus where paraphrases share a distinctive
    /// token: enough signal for the loss to drop fast.
    fn tiny_world() -> (Corpus, Vocab, Vec<Vec<u32>>, Qrels) {
        let entries: Vec<(String, String)> = (0..12)
            .map(|i| {
                let topic = if i % 2 == 0 { "apples" } else { "rivers" };
                let form = match (i / 2) % 3 {
                    0 => format!("how do {topic} grow"),
                    1 => format!("what makes {topic} grow"),
                    _ => format!("why do {topic} grow"),
                };
                (format!("q{i:02}"), form)
            })
            .collect();
        let corpus = Corpus::new(entries).unwrap();
        let docs: Vec<Vec<String>> = (0..corpus.len())
            .map(|i| tokenize(corpus.text(i as u32)))
            .collect();
        let vocab = Vocab::build(docs.iter().map(|d| d.as_slice()), 1).unwrap();
        let token_ids: Vec<Vec<u32>> = (0..corpus.len())
            .map(|i| vocab.encode_text(corpus.text(i as u32), 8))
            .collect();
        let mut qrels = Qrels::new();
        for i in 0..12 {
            for j in 0..12 {
                if i != j && i % 2 == j % 2 {
                    qrels.add(&format!("q{i:02}"), &format!("q{j:02}"));
                }
            }
        }
        (corpus, vocab, token_ids, qrels)
    }

    fn tiny_encoder(vocab_size: usize, seed: u64) -> Encoder<f32> {
        let config = EncoderConfig {
            dim: 8,
            num_layers: 2,
            num_heads: 2,
            d_ff: 16,
            max_len: 8,
            dropout_p: 0.1,
            connectivity: Connectivity::Dense,
            vocab_size,
        };
        Encoder::init(config, &mut SplitMix64::new(seed)).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            peak_lr: 5e-3,
            batch_size: 4,
            epochs: 2,
            eval_every: 3,
            temperature: 0.1,
            pool_depth: 100,
            negatives_per_example: 1,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_inputs(corpus: &Corpus, qrels: &Qrels) -> (Vec<(u32, u32)>, Vec<u32>, HashMap<u32, Vec<u32>>) {
        // Pair each even question with the next even one, etc.
        let mut pairs = Vec::new();
        for i in 0..8u32 {
            let pos = (i + 2) % 12;
            if i % 2 == pos % 2 {
                pairs.push((i, pos));
            }
        }
        let dev: Vec<u32> = vec![8, 9, 10, 11];
        let index = crate::lexical::InvertedIndex::build(corpus);
        let query_ids: Vec<String> = pairs.iter().map(|(q, _)| corpus.id(*q).to_string()).collect();
        let pools = crate::sampling::mine_pools(&index, corpus, qrels, &query_ids, 100).unwrap();
        (pairs, dev, pools)
    }

    #[test]
    fn zero_pairs_is_contract_error() {
        let (corpus, vocab, token_ids, qrels) = tiny_world();
        let encoder = tiny_encoder(vocab.len(), 1);
        let inputs = TrainInputs {
            corpus: &corpus,
            token_ids: &token_ids,
            train_pairs: &[],
            dev_queries: &[0],
            qrels: &qrels,
            pools: &HashMap::new(),
        };
        assert!(train(&encoder, &tiny_config(), &inputs).is_err());
    }

    #[test]
    fn first_batch_loss_is_ln_candidate_count_at_init() {
        let (corpus, vocab, token_ids, qrels) = tiny_world();
        let encoder = tiny_encoder(vocab.len(), 2);
        let (pairs, _, pools) = tiny_inputs(&corpus, &qrels);
        let cfg = tiny_config();
        let examples = epoch_examples(&pairs, &pools, &cfg.sampler_config(), 0).unwrap();
        let chunk = &examples[..cfg.batch_size.min(examples.len())];
        let judged = HashMap::new();
        let batch = build_batch(chunk, &judged);
        // Uniform-softmax prediction at temperature 1.
        let mut rng = SplitMix64::derive(cfg.seed, "dropout");
        let loss = {
            let mut mode = Mode::Train { rng: &mut rng };
            batch_forward_loss(&encoder, &batch, &token_ids, 1.0, &mut mode)
                .unwrap()
                .item()
                .unwrap() as f64
        };
        let mean_ln: f64 = batch
            .examples
            .iter()
            .map(|e| (e.candidates.len() as f64).ln())
            .sum::<f64>()
            / batch.examples.len() as f64;
        assert!((loss - mean_ln).abs() < 0.1, "loss {loss}, uniform prediction {mean_ln}");
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let (corpus, vocab, token_ids, qrels) = tiny_world();
        let (pairs, dev, pools) = tiny_inputs(&corpus, &qrels);
        let run = || {
            let encoder = tiny_encoder(vocab.len(), 3);
            let inputs = TrainInputs {
                corpus: &corpus,
                token_ids: &token_ids,
                train_pairs: &pairs,
                dev_queries: &dev,
                qrels: &qrels,
                pools: &pools,
            };
            let out = train(&encoder, &tiny_config(), &inputs).unwrap();
            (out.log.clone(), out.best_step, out.best_dev_recall)
        };
        let (log_a, best_a, recall_a) = run();
        let (log_b, best_b, recall_b) = run();
        assert_eq!(log_a, log_b, "bit-identical training logs");
        assert_eq!(best_a, best_b);
        assert_eq!(recall_a, recall_b);
        let first = log_a.first().unwrap().loss;
        let last = log_a.last().unwrap().loss;
        assert!(last < first, "loss should drop: {first} -> {last}");
        // Best recorded dev metric is the max over evaluations.
        let max_eval = log_a
            .iter()
            .filter_map(|r| r.dev_recall)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(recall_a, max_eval);
    }
}
