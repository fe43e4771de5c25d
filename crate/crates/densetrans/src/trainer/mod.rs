//! Contrastive training of the encoder.
//!
//! Each example scores its query against a candidate set (the labeled
//! positive, mined hard negatives, and the rest of the batch); the loss
//! is mean softmax cross-entropy with the positive as the target class.
//! Optimization is bias-corrected Adam under a warmup / linear-decay
//! schedule.

mod adam;
mod fit;

pub use adam::Adam;
pub use fit::{train, LogRow, TrainInputs, TrainOutcome};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Cosine scores divide by this before the softmax. Cosines live in
    /// [-1, 1], so values well below 1 sharpen the objective.
    pub temperature: f64,
    pub seed: u64,
    /// Dev Recall@100 evaluation cadence in optimizer steps.
    pub eval_every: usize,
    pub pool_depth: usize,
    pub negatives_per_example: usize,
    pub resample_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-4,
            batch_size: 32,
            warmup_fraction: 0.10,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            epochs: 20,
            temperature: 1.0,
            seed: 0,
            eval_every: 50,
            pool_depth: 100,
            negatives_per_example: 2,
            resample_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.peak_lr <= 0.0 {
            return Err(Error::contract(format!("peak_lr must be > 0, got {}", self.peak_lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) || self.warmup_fraction == 0.0 {
            return Err(Error::contract(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::contract(
                "batch_size, epochs, eval_every must be >= 1".to_string(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(Error::contract(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.pool_depth == 0 && self.negatives_per_example != 0 {
            return Err(Error::contract(
                "pool_depth 0 (in-batch only) requires negatives_per_example 0".to_string(),
            ));
        }
        Ok(())
    }

    pub(crate) fn sampler_config(&self) -> crate::sampling::SamplerConfig {
        crate::sampling::SamplerConfig {
            pool_depth: self.pool_depth,
            negatives_per_example: self.negatives_per_example,
            seed: self.seed,
            resample_each_epoch: self.resample_each_epoch,
        }
    }
}

/// Learning rate at `step` of a `total_steps` run: linear 0 to peak over
/// `ceil(warmup_fraction * total)` steps, then linear peak to 0.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::contract("total_steps must be > 0".to_string()));
    }
    if step > total_steps {
        return Err(Error::contract(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let warmup = (config.warmup_fraction * total_steps as f64).ceil() as usize;
    let warmup = warmup.max(1);
    if step <= warmup {
        Ok(config.peak_lr * step as f64 / warmup as f64)
    } else {
        let decay_span = (total_steps - warmup).max(1);
        Ok(config.peak_lr * (total_steps - step) as f64 / decay_span as f64)
    }
}

/// Mean over the batch of `-log softmax(scores/temperature)[label]`,
/// where example `i`'s scores are the cosines between its query encoding
/// and each of its candidate encodings.
pub fn batch_loss<F: Real>(
    query_encodings: &[Tensor<F>],
    candidate_encodings: &[Vec<Tensor<F>>],
    labels: &[usize],
    temperature: f64,
) -> Result<Tensor<F>> {
    if query_encodings.is_empty() {
        return Err(Error::contract("empty batch".to_string()));
    }
    if query_encodings.len() != candidate_encodings.len() || labels.len() != query_encodings.len() {
        return Err(Error::contract(format!(
            "batch pieces disagree: {} queries, {} candidate sets, {} labels",
            query_encodings.len(),
            candidate_encodings.len(),
            labels.len()
        )));
    }
    let inv_temp = F::from_f64c(1.0 / temperature);
    let mut losses = Vec::with_capacity(query_encodings.len());
    for ((q, cands), &label) in query_encodings.iter().zip(candidate_encodings).zip(labels) {
        if cands.is_empty() {
            return Err(Error::contract("example with empty candidate set".to_string()));
        }
        if label >= cands.len() {
            return Err(Error::contract(format!(
                "label {label} out of range for {} candidates",
                cands.len()
            )));
        }
        let mut scores = Vec::with_capacity(cands.len());
        for c in cands {
            scores.push(q.cosine(c)?);
        }
        let logits = Tensor::stack_scalars(&scores)?.scale(inv_temp);
        losses.push(logits.softmax_cross_entropy(label)?);
    }
    Ok(Tensor::stack_scalars(&losses)?.mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig { peak_lr: 0.5, ..TrainConfig::default() }
    }

    #[test]
    fn lr_pinned_points() {
        let c = cfg();
        let total = 200;
        let warmup = (0.10f64 * 200.0).ceil() as usize; // 20
        assert_eq!(lr_at(0, total, &c).unwrap(), 0.0);
        assert_eq!(lr_at(warmup, total, &c).unwrap(), c.peak_lr);
        assert_eq!(lr_at(total, total, &c).unwrap(), 0.0);
        assert!(lr_at(total + 1, total, &c).is_err());
    }

    #[test]
    fn lr_is_piecewise_linear() {
        let c = cfg();
        let total = 100;
        // Warmup covers 10 steps: step 5 sits at half peak.
        assert!((lr_at(5, total, &c).unwrap() - 0.25).abs() < 1e-12);
        // Decay midpoint: step 55 of the 90-step decay has 45 left.
        let expect = 0.5 * 45.0 / 90.0;
        assert!((lr_at(55, total, &c).unwrap() - expect).abs() < 1e-12);
    }

    fn unit(v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(vec![v.len()], v).unwrap()
    }

    #[test]
    fn equal_scores_give_ln_n() {
        let q = unit(vec![1.0, 0.0]);
        // Four identical candidates: uniform softmax, loss = ln 4.
        let cands = vec![unit(vec![0.5, 0.5]); 4];
        let loss = batch_loss(&[q], &[cands], &[0], 1.0).unwrap().item().unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let q = unit(vec![1.0, 0.0]);
        let pos = unit(vec![1.0, 0.0]);
        let neg = unit(vec![-1.0, 0.0]);
        // Tiny temperature pushes the positive's logit far above.
        let loss = batch_loss(&[q], &[vec![pos, neg]], &[0], 0.005)
            .unwrap()
            .item()
            .unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn loss_matches_log_sum_exp_oracle() {
        // Independent direct evaluation from raw cosine scores.
        let mut rng = crate::rng::SplitMix64::new(11);
        let dim = 6;
        let q: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cands: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let temperature = 0.25;
        let label = 2;

        let qt = unit(q.clone());
        let ct: Vec<Tensor<f64>> = cands.iter().map(|c| unit(c.clone())).collect();
        let got = batch_loss(&[qt], &[ct], &[label], temperature).unwrap().item().unwrap();

        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let logits: Vec<f64> = cands.iter().map(|c| cos(&q, c) / temperature).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        let expect = lse - logits[label];
        assert!((got - expect).abs() < 1e-6, "got {got}, oracle {expect}");
    }

    #[test]
    fn empty_candidate_set_is_contract_error() {
        let q = unit(vec![1.0, 0.0]);
        let err = batch_loss(&[q], &[vec![]], &[0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { peak_lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { warmup_fraction: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { warmup_fraction: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { temperature: 0.0, ..TrainConfig::default() }.validate().is_err());
    }
}
