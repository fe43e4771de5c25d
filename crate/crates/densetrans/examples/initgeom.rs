//! Scratch probe: per-layer [CLS] cosine structure of an untrained model.

use densetrans::encoder::{cosine_score, Connectivity, EncoderConfig, Encoder};
use densetrans::pipeline::Experiment;
use densetrans::rng::SplitMix64;
use densetrans::synth::SynthConfig;

fn main() {
    let exp = Experiment::synthetic(&SynthConfig::default(), 12, 4).unwrap();
    for conn in [Connectivity::Dense, Connectivity::AllDense] {
        let cfg = EncoderConfig {
            dim: 24, num_layers: 3, num_heads: 6, d_ff: 96, max_len: 12,
            dropout_p: 0.1, connectivity: conn, vocab_size: exp.vocab.len(),
        };
        let encoder = Encoder::<f32>::init(cfg, &mut SplitMix64::new(1)).unwrap();
        // Sample pairs: (paraphrase pair) vs (random pair)
        let mut rng = SplitMix64::new(7);
        let mut pos_stats = vec![Vec::new(); 4];
        let mut neg_stats = vec![Vec::new(); 4];
        let qrels = &exp.qrels;
        let ids: Vec<&String> = exp.corpus.ids().iter().collect();
        for _ in 0..200 {
            let qi = rng.below(ids.len());
            let q = ids[qi];
            let Some(rels) = qrels.get(q) else { continue };
            let pos = rels.iter().next().unwrap();
            let mut neg;
            loop {
                neg = ids[rng.below(ids.len())];
                if neg != q && !rels.contains(neg.as_str()) { break; }
            }
            let reps = |id: &str| {
                let ord = exp.corpus.ordinal(id).unwrap();
                encoder.layer_representations(&exp.token_ids[ord as usize]).unwrap()
            };
            let (rq, rp, rn) = (reps(q), reps(pos), reps(neg));
            for l in 0..4 {
                pos_stats[l].push(cosine_score(&rq[l], &rp[l]).unwrap().value);
                neg_stats[l].push(cosine_score(&rq[l], &rn[l]).unwrap().value);
            }
        }
        for l in 0..4 {
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            let min = |v: &Vec<f64>| v.iter().cloned().fold(f64::INFINITY, f64::min);
            eprintln!(
                "{conn} layer {l}: pos mean {:.3} min {:.3} | neg mean {:.3} min {:.3} | neg<=0 frac {:.2}",
                mean(&pos_stats[l]), min(&pos_stats[l]), mean(&neg_stats[l]), min(&neg_stats[l]),
                neg_stats[l].iter().filter(|c| **c <= 0.0).count() as f64 / neg_stats[l].len() as f64
            );
        }
    }
}
