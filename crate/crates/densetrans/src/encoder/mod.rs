//! The dense-connected Transformer text encoder.
//!
//! A question is a token-id list; the encoder prepends a `[CLS]` pooling
//! token, pads to a fixed length, runs `N` Transformer layers, and reads
//! the `[CLS]` row of the last layer as the text representation. Under
//! dense connectivity each layer receives the feature-axis concatenation
//! of the embedding output and every preceding layer's output, which
//! keeps low-level lexical features reachable from the final
//! representation. Pairs of encodings are scored by cosine similarity;
//! the same encoder serves both sides of the dual-encoder scoring.

pub mod params;

pub use params::{EncoderParams, LayerParams, WordVectors};

use crate::error::{Error, Result};
use crate::lexical::PAD_ID;
use crate::rng::SplitMix64;
use crate::tensor::{Real, Tensor};

/// Added to attention logits at pad key positions before the softmax.
pub const ATTENTION_MASK_VALUE: f64 = -1e9;

/// Layer-norm stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How layer inputs are wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Layer `l` reads `[E0; E1; ...; E(l-1)]` (feature-axis concat).
    Dense,
    /// Dense below, but the last layer reads only `E(N-1)`.
    TopDense,
    /// Plain chain: layer `l` reads `E(l-1)` only.
    AllDense,
    /// Plain chain, pooled as the concat of all layers' `[CLS]` rows.
    ConcatPool,
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Connectivity::Dense => "dense",
            Connectivity::TopDense => "top_dense",
            Connectivity::AllDense => "all_dense",
            Connectivity::ConcatPool => "concat_pool",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Connectivity::Dense),
            "top_dense" => Ok(Connectivity::TopDense),
            "all_dense" => Ok(Connectivity::AllDense),
            "concat_pool" => Ok(Connectivity::ConcatPool),
            other => Err(Error::Config(format!(
                "unknown connectivity {other:?} (expected dense | top_dense | all_dense | concat_pool)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Embedding and layer output width `d`.
    pub dim: usize,
    /// Number of Transformer layers `N`.
    pub num_layers: usize,
    /// Attention heads `H`; `d` must divide evenly.
    pub num_heads: usize,
    /// FFN inner width.
    pub d_ff: usize,
    /// Tokens per question, excluding `[CLS]`.
    pub max_len: usize,
    pub dropout_p: f64,
    pub connectivity: Connectivity,
    pub vocab_size: usize,
}

impl EncoderConfig {
    /// The reference defaults: d=300, N=3, H=6, d_ff=4d, 30 tokens,
    /// dropout 0.1, dense connectivity.
    pub fn with_defaults(vocab_size: usize) -> Self {
        EncoderConfig {
            dim: 300,
            num_layers: 3,
            num_heads: 6,
            d_ff: 1200,
            max_len: 30,
            dropout_p: 0.1,
            connectivity: Connectivity::Dense,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_layers == 0 || self.num_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config("dim, num_layers, num_heads, d_ff must be positive".into()));
        }
        if self.dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by num_heads {}",
                self.dim, self.num_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocab_size must cover the reserved ids".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    /// Sequence length including the `[CLS]` slot.
    pub fn seq_len(&self) -> usize {
        self.max_len + 1
    }

    /// Input width of layer `l` (1-based) under the configured wiring.
    pub fn input_width(&self, layer: usize) -> usize {
        debug_assert!(layer >= 1 && layer <= self.num_layers);
        match self.connectivity {
            Connectivity::Dense => layer * self.dim,
            Connectivity::AllDense | Connectivity::ConcatPool => self.dim,
            Connectivity::TopDense => {
                if layer < self.num_layers {
                    layer * self.dim
                } else {
                    self.dim
                }
            }
        }
    }

    pub fn layer_input_widths(&self) -> Vec<usize> {
        (1..=self.num_layers).map(|l| self.input_width(l)).collect()
    }

    /// Width of the pooled question encoding.
    pub fn encoding_dim(&self) -> usize {
        match self.connectivity {
            Connectivity::ConcatPool => self.num_layers * self.dim,
            _ => self.dim,
        }
    }
}

/// Forward-pass mode: eval is deterministic, train applies dropout drawn
/// from the supplied stream.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut SplitMix64 },
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Non-default forward behavior.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts {
    /// Detach every dense concat input except the immediately preceding
    /// layer, so gradients reach early layers only through the layer
    /// chain. Diagnostic switch for gradient-path tests; never used in
    /// training.
    pub detach_dense_inputs: bool,
}

/// Output of a forward pass.
pub struct Forward<F: Real> {
    /// Pooled question encoding (graph node).
    pub pooled: Tensor<F>,
    /// `[CLS]` row of `E0..EN`, one per layer plus the embedding output.
    pub layer_cls: Vec<Tensor<F>>,
}

/// A pooled question representation ready for indexing or scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEncoding {
    pub question_id: String,
    pub vector: Vec<f32>,
}

/// Cosine similarity with an explicit degenerate-input flag: a zero
/// vector has no direction, so the score is defined as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineScore {
    pub value: f64,
    pub zero_vector: bool,
}

/// Cosine similarity of two equal-length vectors, accumulated at f64.
pub fn cosine_score<F: Real>(a: &[F], b: &[F]) -> Result<CosineScore> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "cosine_score",
            format!("lengths {} vs {}", a.len(), b.len()),
        ));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64c(), y.to_f64c());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(CosineScore { value: 0.0, zero_vector: true });
    }
    Ok(CosineScore { value: dot / (na.sqrt() * nb.sqrt()), zero_vector: false })
}

pub struct Encoder<F: Real> {
    pub config: EncoderConfig,
    pub params: EncoderParams<F>,
}

impl<F: Real> Encoder<F> {
    pub fn new(config: EncoderConfig, params: EncoderParams<F>) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config, params })
    }

    pub fn init(config: EncoderConfig, rng: &mut SplitMix64) -> Result<Self> {
        let params = EncoderParams::init(&config, rng)?;
        Ok(Encoder { config, params })
    }

    /// Input representation `E0`: row 0 is the `[CLS]` embedding, row `t`
    /// is `token_embedding[id_t] + position_embedding[t]`; rows beyond
    /// the question are pad rows. The mask marks real (non-pad)
    /// positions; explicit pad ids inside the list are masked too.
    pub fn embed_input(&self, ids: &[u32]) -> Result<(Tensor<F>, Vec<bool>)> {
        if ids.len() > self.config.max_len {
            return Err(Error::contract(format!(
                "question has {} tokens, max_len is {} (caller truncates)",
                ids.len(),
                self.config.max_len
            )));
        }
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(Error::VocabIndex { id, size: self.config.vocab_size });
            }
        }
        let seq = self.config.seq_len();
        let mut row_ids = Vec::with_capacity(seq);
        row_ids.push(crate::lexical::CLS_ID);
        row_ids.extend_from_slice(ids);
        row_ids.resize(seq, PAD_ID);

        let mut mask = vec![false; seq];
        mask[0] = true;
        for (t, &id) in ids.iter().enumerate() {
            mask[t + 1] = id != PAD_ID;
        }

        let tokens = Tensor::embedding_lookup(&self.params.token_embeddings, &row_ids)?;
        let positions: Vec<u32> = (0..seq as u32).collect();
        let pos = Tensor::embedding_lookup(&self.params.position_embeddings, &positions)?;
        Ok((tokens.add(&pos)?, mask))
    }

    /// One Transformer layer: masked multi-head self-attention with a
    /// (projected) residual and layer norm, then the ReLU FFN with
    /// residual and layer norm. Dropout hits attention weights and both
    /// sublayer outputs in training mode.
    pub fn encode_layer(
        &self,
        layer: usize,
        input: &Tensor<F>,
        mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<Tensor<F>> {
        self.encode_layer_full(layer, input, mask, mode, None)
    }

    pub(crate) fn encode_layer_full(
        &self,
        layer: usize,
        input: &Tensor<F>,
        mask: &[bool],
        mode: &mut Mode<'_>,
        mut capture_attn: Option<&mut Vec<Tensor<F>>>,
    ) -> Result<Tensor<F>> {
        let cfg = &self.config;
        if layer < 1 || layer > cfg.num_layers {
            return Err(Error::contract(format!(
                "layer {layer} out of range 1..={}",
                cfg.num_layers
            )));
        }
        let in_dim = cfg.input_width(layer);
        let seq = cfg.seq_len();
        if input.shape() != [seq, in_dim] {
            return Err(Error::shape(
                "encode_layer",
                format!("layer {layer} expects [{seq}, {in_dim}], got {:?}", input.shape()),
            ));
        }
        let lp = &self.params.layers[layer - 1];
        let scale = F::from_f64c(1.0 / (cfg.dim as f64).sqrt());
        let mask_bias_data: Vec<F> = mask
            .iter()
            .map(|real| if *real { F::zero() } else { F::from_f64c(ATTENTION_MASK_VALUE) })
            .collect();
        let mask_bias = Tensor::from_vec(vec![seq], mask_bias_data)?;

        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let q = input.matmul(&lp.wq[h])?;
            let k = input.matmul(&lp.wk[h])?;
            let v = input.matmul(&lp.wv[h])?;
            let logits = q.matmul(&k.transpose()?)?.scale(scale).add_bias(&mask_bias)?;
            let attn = logits.softmax(1)?;
            if let Some(cap) = capture_attn.as_deref_mut() {
                cap.push(attn.clone());
            }
            let attn = self.maybe_dropout(attn, mode)?;
            heads.push(attn.matmul(&v)?);
        }
        let head_refs: Vec<&Tensor<F>> = heads.iter().collect();
        let concat = Tensor::concat(&head_refs, 1)?;
        let attn_out = self.maybe_dropout(concat.matmul(&lp.wo)?, mode)?;

        let residual = match &lp.wr {
            Some(wr) => input.matmul(wr)?,
            None => input.clone(),
        };
        let x1 = attn_out
            .add(&residual)?
            .layer_norm(&lp.ln1_gamma, &lp.ln1_beta, LAYER_NORM_EPS)?;

        let ffn = x1
            .matmul(&lp.w1)?
            .add_bias(&lp.b1)?
            .relu()
            .matmul(&lp.w2)?
            .add_bias(&lp.b2)?;
        let ffn = self.maybe_dropout(ffn, mode)?;
        ffn.add(&x1)?.layer_norm(&lp.ln2_gamma, &lp.ln2_beta, LAYER_NORM_EPS)
    }

    fn maybe_dropout(&self, t: Tensor<F>, mode: &mut Mode<'_>) -> Result<Tensor<F>> {
        match mode {
            Mode::Eval => Ok(t),
            Mode::Train { rng } => t.dropout(self.config.dropout_p, true, rng),
        }
    }

    pub fn forward(&self, ids: &[u32], mode: &mut Mode<'_>) -> Result<Forward<F>> {
        self.forward_with(ids, mode, ForwardOpts::default())
    }

    /// Full forward pass under the configured connectivity.
    pub fn forward_with(
        &self,
        ids: &[u32],
        mode: &mut Mode<'_>,
        opts: ForwardOpts,
    ) -> Result<Forward<F>> {
        let cfg = &self.config;
        let (e0, mask) = self.embed_input(ids)?;
        let mut reps: Vec<Tensor<F>> = vec![e0];
        for layer in 1..=cfg.num_layers {
            let wants_concat = match cfg.connectivity {
                Connectivity::Dense => true,
                Connectivity::TopDense => layer < cfg.num_layers,
                Connectivity::AllDense | Connectivity::ConcatPool => false,
            };
            let input = if wants_concat && reps.len() > 1 {
                let mut parts: Vec<Tensor<F>> = Vec::with_capacity(reps.len());
                for (i, rep) in reps.iter().enumerate() {
                    // With the diagnostic switch on, only the chain edge
                    // (the most recent representation) carries gradient.
                    if opts.detach_dense_inputs && i + 1 != reps.len() {
                        parts.push(rep.detach());
                    } else {
                        parts.push(rep.clone());
                    }
                }
                let refs: Vec<&Tensor<F>> = parts.iter().collect();
                Tensor::concat(&refs, 1)?
            } else if wants_concat {
                reps[0].clone()
            } else {
                reps[reps.len() - 1].clone()
            };
            let out = self.encode_layer(layer, &input, &mask, mode)?;
            reps.push(out);
        }
        let mut layer_cls = Vec::with_capacity(reps.len());
        for rep in &reps {
            layer_cls.push(rep.row(0)?);
        }
        let pooled = match cfg.connectivity {
            Connectivity::ConcatPool => {
                let refs: Vec<&Tensor<F>> = layer_cls[1..].iter().collect();
                Tensor::concat(&refs, 0)?
            }
            _ => layer_cls[cfg.num_layers].clone(),
        };
        Ok(Forward { pooled, layer_cls })
    }

    /// Eval-mode pooled encoding as plain values.
    pub fn encode_eval(&self, ids: &[u32]) -> Result<Vec<F>> {
        Ok(self.forward(ids, &mut Mode::Eval)?.pooled.to_vec())
    }

    /// Eval-mode `[CLS]` vector of every layer output `E0..EN`, for the
    /// layer-wise discrimination diagnostic.
    pub fn layer_representations(&self, ids: &[u32]) -> Result<Vec<Vec<F>>> {
        let fwd = self.forward(ids, &mut Mode::Eval)?;
        Ok(fwd.layer_cls.iter().map(|t| t.to_vec()).collect())
    }
}
