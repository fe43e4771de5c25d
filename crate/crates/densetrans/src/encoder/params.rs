//! Encoder parameters: shapes, initialization, naming.
//!
//! Per-layer attention projections are stored per head as
//! `in_dim(layer) × d/H` matrices; the input width `in_dim` grows with
//! depth under dense connectivity, so layers are not interchangeable.
//! When `in_dim != d` the residual path carries a learned projection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::lexical::Vocab;
use crate::rng::SplitMix64;
use crate::tensor::{Real, Tensor};

pub struct LayerParams<F: Real> {
    pub wq: Vec<Tensor<F>>,
    pub wk: Vec<Tensor<F>>,
    pub wv: Vec<Tensor<F>>,
    pub wo: Tensor<F>,
    /// Residual projection, present iff the layer input is wider than `d`.
    pub wr: Option<Tensor<F>>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub ln1_gamma: Tensor<F>,
    pub ln1_beta: Tensor<F>,
    pub ln2_gamma: Tensor<F>,
    pub ln2_beta: Tensor<F>,
}

pub struct EncoderParams<F: Real> {
    pub token_embeddings: Tensor<F>,
    pub position_embeddings: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
}

/// Uniform in `(-limit, limit)` with the Glorot fan-based limit.
fn glorot<F: Real>(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<F> = (0..rows * cols)
        .map(|_| F::from_f64c(rng.uniform(-limit, limit)))
        .collect();
    Tensor::param(vec![rows, cols], data).expect("glorot shape")
}

fn uniform_matrix<F: Real>(rows: usize, cols: usize, limit: f64, rng: &mut SplitMix64) -> Tensor<F> {
    let data: Vec<F> = (0..rows * cols)
        .map(|_| F::from_f64c(rng.uniform(-limit, limit)))
        .collect();
    Tensor::param(vec![rows, cols], data).expect("uniform shape")
}

fn constant_vector<F: Real>(len: usize, v: f64) -> Tensor<F> {
    Tensor::param(vec![len], vec![F::from_f64c(v); len]).expect("const shape")
}

impl<F: Real> EncoderParams<F> {
    /// Random initialization: token rows uniform(-0.2, 0.2), position
    /// rows uniform(-0.02, 0.02), weight matrices Glorot uniform, biases
    /// zero, layer-norm at identity.
    pub fn init(config: &EncoderConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let head_dim = config.head_dim();
        let token_embeddings = uniform_matrix(config.vocab_size, d, 0.2, rng);
        let position_embeddings = uniform_matrix(config.max_len + 1, d, 0.02, rng);
        let mut layers = Vec::with_capacity(config.num_layers);
        for in_dim in config.layer_input_widths() {
            let mut wq = Vec::with_capacity(config.num_heads);
            let mut wk = Vec::with_capacity(config.num_heads);
            let mut wv = Vec::with_capacity(config.num_heads);
            for _ in 0..config.num_heads {
                wq.push(glorot(in_dim, head_dim, rng));
                wk.push(glorot(in_dim, head_dim, rng));
                wv.push(glorot(in_dim, head_dim, rng));
            }
            let wo = glorot(d, d, rng);
            let wr = if in_dim != d { Some(glorot(in_dim, d, rng)) } else { None };
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo,
                wr,
                w1: glorot(d, config.d_ff, rng),
                b1: constant_vector(config.d_ff, 0.0),
                w2: glorot(config.d_ff, d, rng),
                b2: constant_vector(d, 0.0),
                ln1_gamma: constant_vector(d, 1.0),
                ln1_beta: constant_vector(d, 0.0),
                ln2_gamma: constant_vector(d, 1.0),
                ln2_beta: constant_vector(d, 0.0),
            });
        }
        Ok(EncoderParams { token_embeddings, position_embeddings, layers })
    }

    /// Like [`EncoderParams::init`], then overwrite token rows for words
    /// present in the pretrained vectors. Out-of-vocabulary rows keep the
    /// uniform(-0.2, 0.2) draw.
    pub fn init_with_word_vectors(
        config: &EncoderConfig,
        vocab: &Vocab,
        vectors: &WordVectors,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if vectors.dim != config.dim {
            return Err(Error::Config(format!(
                "word vectors have dim {}, encoder expects {}",
                vectors.dim, config.dim
            )));
        }
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} entries, encoder expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let params = Self::init(config, rng)?;
        let d = config.dim;
        params.token_embeddings.update_data(|table| {
            for id in 0..vocab.len() {
                let Some(word) = vocab.word(id as u32) else { continue };
                if let Some(vec) = vectors.get(word) {
                    for (c, v) in vec.iter().enumerate() {
                        table[id * d + c] = F::from_f64c(*v);
                    }
                }
            }
        });
        Ok(params)
    }

    /// Every learnable tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, Tensor<F>)> {
        let mut out: Vec<(String, Tensor<F>)> = vec![
            ("token_embeddings".to_string(), self.token_embeddings.clone()),
            ("position_embeddings".to_string(), self.position_embeddings.clone()),
        ];
        for (i, lp) in self.layers.iter().enumerate() {
            for (h, t) in lp.wq.iter().enumerate() {
                out.push((format!("layer{i}.head{h}.wq"), t.clone()));
            }
            for (h, t) in lp.wk.iter().enumerate() {
                out.push((format!("layer{i}.head{h}.wk"), t.clone()));
            }
            for (h, t) in lp.wv.iter().enumerate() {
                out.push((format!("layer{i}.head{h}.wv"), t.clone()));
            }
            out.push((format!("layer{i}.wo"), lp.wo.clone()));
            if let Some(wr) = &lp.wr {
                out.push((format!("layer{i}.wr"), wr.clone()));
            }
            out.push((format!("layer{i}.ffn_w1"), lp.w1.clone()));
            out.push((format!("layer{i}.ffn_b1"), lp.b1.clone()));
            out.push((format!("layer{i}.ffn_w2"), lp.w2.clone()));
            out.push((format!("layer{i}.ffn_b2"), lp.b2.clone()));
            out.push((format!("layer{i}.ln1_gamma"), lp.ln1_gamma.clone()));
            out.push((format!("layer{i}.ln1_beta"), lp.ln1_beta.clone()));
            out.push((format!("layer{i}.ln2_gamma"), lp.ln2_gamma.clone()));
            out.push((format!("layer{i}.ln2_beta"), lp.ln2_beta.clone()));
        }
        out
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named() {
            t.zero_grad();
        }
    }

    /// Copy of every parameter's values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<(String, Vec<F>)> {
        self.named()
            .into_iter()
            .map(|(name, t)| (name, t.to_vec()))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Vec<F>)]) -> Result<()> {
        let named = self.named();
        if named.len() != snapshot.len() {
            return Err(Error::contract(format!(
                "snapshot has {} tensors, model has {}",
                snapshot.len(),
                named.len()
            )));
        }
        for ((name, tensor), (sname, values)) in named.iter().zip(snapshot) {
            if name != sname {
                return Err(Error::contract(format!(
                    "snapshot tensor {sname:?} does not match model tensor {name:?}"
                )));
            }
            tensor.set_data(values)?;
        }
        Ok(())
    }
}

/// Pretrained word vectors in the plain-text format: a `V d` header line
/// followed by one `token v1 .. vd` line per word.
pub struct WordVectors {
    pub dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn from_pairs(dim: usize, pairs: Vec<(String, Vec<f64>)>) -> Result<WordVectors> {
        let mut map = HashMap::with_capacity(pairs.len());
        for (word, vec) in pairs {
            if vec.len() != dim {
                return Err(Error::contract(format!(
                    "vector for {word:?} has dim {}, expected {dim}",
                    vec.len()
                )));
            }
            map.insert(word, vec);
        }
        Ok(WordVectors { dim, map })
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.map.get(word).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn load(path: &Path) -> Result<WordVectors> {
        let fname = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::Format {
            path: fname.clone(),
            msg: format!("cannot open: {e}"),
        })?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format { path: fname.clone(), msg: "empty file".to_string() })?;
        let mut hp = header.split_whitespace();
        let count: usize = hp
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { path: fname.clone(), line: 1, msg: "bad vector count".to_string() })?;
        let dim: usize = hp
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { path: fname.clone(), line: 1, msg: "bad dimension".to_string() })?;
        let mut map = HashMap::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_string();
            let vals: std::result::Result<Vec<f64>, _> = parts.map(|s| s.parse::<f64>()).collect();
            let vals = vals.map_err(|_| Error::Parse {
                path: fname.clone(),
                line: i + 2,
                msg: "bad float".to_string(),
            })?;
            if vals.len() != dim {
                return Err(Error::Parse {
                    path: fname.clone(),
                    line: i + 2,
                    msg: format!("expected {dim} values, got {}", vals.len()),
                });
            }
            map.insert(word, vals);
        }
        Ok(WordVectors { dim, map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Connectivity;

    fn small_config(connectivity: Connectivity) -> EncoderConfig {
        EncoderConfig {
            dim: 6,
            num_layers: 3,
            num_heads: 3,
            d_ff: 12,
            max_len: 4,
            dropout_p: 0.1,
            connectivity,
            vocab_size: 11,
        }
    }

    #[test]
    fn dense_param_shapes_follow_width_schedule() {
        let cfg = small_config(Connectivity::Dense);
        let mut rng = SplitMix64::new(1);
        let p: EncoderParams<f32> = EncoderParams::init(&cfg, &mut rng).unwrap();
        assert_eq!(p.token_embeddings.shape(), &[11, 6]);
        assert_eq!(p.position_embeddings.shape(), &[5, 6]);
        for (l, lp) in p.layers.iter().enumerate() {
            let in_dim = (l + 1) * 6;
            assert_eq!(lp.wq[0].shape(), &[in_dim, 2]);
            assert_eq!(lp.wo.shape(), &[6, 6]);
            if l == 0 {
                assert!(lp.wr.is_none());
            } else {
                assert_eq!(lp.wr.as_ref().unwrap().shape(), &[in_dim, 6]);
            }
        }
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let cfg = small_config(Connectivity::AllDense);
        let mut rng = SplitMix64::new(2);
        let p: EncoderParams<f32> = EncoderParams::init(&cfg, &mut rng).unwrap();
        let snap = p.snapshot();
        p.token_embeddings.update_data(|d| d[0] += 1.0);
        assert_ne!(p.token_embeddings.to_vec(), snap[0].1);
        p.restore(&snap).unwrap();
        assert_eq!(p.token_embeddings.to_vec(), snap[0].1);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = small_config(Connectivity::Dense);
        let a: EncoderParams<f32> = EncoderParams::init(&cfg, &mut SplitMix64::new(7)).unwrap();
        let b: EncoderParams<f32> = EncoderParams::init(&cfg, &mut SplitMix64::new(7)).unwrap();
        for ((_, x), (_, y)) in a.named().iter().zip(b.named().iter()) {
            assert_eq!(x.to_vec(), y.to_vec());
        }
    }

    #[test]
    fn word_vector_rows_override_random_init() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "2 6\nhello 1 2 3 4 5 6\nworld 6 5 4 3 2 1\n").unwrap();
        let vectors = WordVectors::load(&path).unwrap();
        assert_eq!(vectors.len(), 2);

        let texts = [crate::lexical::tokenize("hello there")];
        let vocab = Vocab::build(texts.iter().map(|t| t.as_slice()), 1).unwrap();
        let mut cfg = small_config(Connectivity::AllDense);
        cfg.vocab_size = vocab.len();
        let p: EncoderParams<f32> =
            EncoderParams::init_with_word_vectors(&cfg, &vocab, &vectors, &mut SplitMix64::new(3)).unwrap();
        let table = p.token_embeddings.to_vec();
        let hello_id = vocab.id("hello").unwrap() as usize;
        assert_eq!(&table[hello_id * 6..(hello_id + 1) * 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // "there" is OOV for the vector file: stays within the uniform range.
        let there_id = vocab.id("there").unwrap() as usize;
        assert!(table[there_id * 6..(there_id + 1) * 6].iter().all(|v| v.abs() < 0.2));
    }
}
