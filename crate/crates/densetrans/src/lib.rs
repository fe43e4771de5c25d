//! First-stage question retrieval with a densely connected Transformer
//! dual encoder.
//!
//! The crate covers the full pipeline: a minimal reverse-mode autodiff
//! tensor core, the dense-connected Transformer text encoder, BM25
//! lexical retrieval used both as a baseline and as the hard-negative
//! miner, contrastive training with in-batch negatives, an IVFPQ
//! approximate-nearest-neighbor index with an exact-search oracle, and
//! standard IR evaluation metrics plus a layer-wise discrimination
//! diagnostic.
//!
//! Everything is deterministic given a seed; see [`rng`] for the
//! generator.

pub mod ann;
pub mod data;
pub mod encoder;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod pipeline;
pub mod gradcheck;
pub mod lexical;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use tensor::{Dtype, Real, Tape, Tensor};
