//! Scratch calibration harness: trains the ablation grid and prints the
//! directional verdicts. Args: temperature lr epochs J scale dropout

use densetrans::encoder::{Connectivity, EncoderConfig};
use densetrans::pipeline::Experiment;
use densetrans::synth::SynthConfig;
use densetrans::trainer::TrainConfig;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let temperature: f64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let peak_lr: f64 = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let epochs: usize = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let j: usize = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);
    let scale: f64 = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let dropout: f64 = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let exp = Experiment::synthetic(&SynthConfig::default(), 12, 4).unwrap();
    let vectors = if scale > 0.0 { Some(exp.synthetic_vectors(24, scale, 13).unwrap()) } else { None };
    let enc = EncoderConfig {
        dim: 24, num_layers: 3, num_heads: 6, d_ff: 96, max_len: 12,
        dropout_p: dropout, connectivity: Connectivity::Dense, vocab_size: 0,
    };
    let train = TrainConfig {
        peak_lr, batch_size: 32, epochs, temperature, eval_every: 50,
        pool_depth: 100, negatives_per_example: j, ..TrainConfig::default()
    };
    let pools100 = exp.mine(100).unwrap();
    let pools0 = std::collections::HashMap::new();

    let seeds = [1u64, 2, 3];
    let mut r10 = std::collections::HashMap::new();
    let mut diag = std::collections::HashMap::new();
    for conn in [Connectivity::Dense, Connectivity::AllDense, Connectivity::ConcatPool] {
        let mut rs = Vec::new();
        let mut ds: Vec<Vec<f64>> = Vec::new();
        for seed in seeds {
            let mut e = enc.clone();
            e.connectivity = conn;
            let mut t = train.clone();
            t.seed = seed;
            let (encoder, _) = exp.train_encoder_with(&e, &t, &pools100, vectors.as_ref()).unwrap();
            rs.push(exp.recall_at_k(&encoder, &exp.test_queries, 10).unwrap());
            ds.push(exp.diagnostic(&encoder, 99).unwrap());
        }
        let rmean = rs.iter().sum::<f64>() / 3.0;
        let dmean: Vec<f64> = (0..4).map(|l| ds.iter().map(|d| d[l]).sum::<f64>() / 3.0).collect();
        eprintln!(
            "{conn}: r10s={rs:.3?} mean={rmean:.4} diag_mean=[{}]",
            dmean.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(",")
        );
        r10.insert(format!("{conn}"), rmean);
        diag.insert(format!("{conn}"), dmean);
    }
    let mut rs = Vec::new();
    for seed in seeds {
        let mut t = train.clone();
        t.seed = seed;
        t.pool_depth = 0;
        t.negatives_per_example = 0;
        let (encoder, _) = exp.train_encoder_with(&enc, &t, &pools0, vectors.as_ref()).unwrap();
        rs.push(exp.recall_at_k(&encoder, &exp.test_queries, 10).unwrap());
    }
    let pool0_mean = rs.iter().sum::<f64>() / 3.0;
    eprintln!("dense-pool0: r10s={rs:.3?} mean={pool0_mean:.4}");

    let (d, ad, cp) = (r10["dense"], r10["all_dense"], r10["concat_pool"]);
    let (dd, add) = (&diag["dense"], &diag["all_dense"]);
    eprintln!("C6a dense>all_dense:      {} ({:.4} vs {:.4}, margin {:+.4})", d > ad, d, ad, d - ad);
    eprintln!("C6b concat>all_dense:     {} ({:.4} vs {:.4}, margin {:+.4})", cp > ad, cp, ad, cp - ad);
    eprintln!("C7a alldense l3<=l1:      {} ({:.3} vs {:.3})", add[3] <= add[1], add[3], add[1]);
    eprintln!("C7b dense_l3>alldense_l3: {} ({:.3} vs {:.3})", dd[3] > add[3], dd[3], add[3]);
    eprintln!("C8  pool100>pool0:        {} ({:.4} vs {:.4}, margin {:+.4})", d > pool0_mean, d, pool0_mean, d - pool0_mean);
}
