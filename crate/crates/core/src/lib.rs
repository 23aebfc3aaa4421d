//! Latent filling for speaker-conditioned generators.
//!
//! The crate provides the augmentation itself ([`latent_fill`]), the
//! consistency losses it is trained with ([`losses`]), a small reverse-mode
//! differentiation engine ([`grad`]), a toy duration-upsampling generator
//! with a frozen speaker encoder ([`model`]), a synthetic multi-speaker
//! corpus ([`corpus`]), the two-mode training loop ([`train`]) and
//! zero-shot speaker-similarity evaluation ([`eval`]).

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod grad;
pub mod kvfile;
pub mod latent_fill;
pub mod losses;
pub mod model;
pub mod rng;
pub mod train;
pub mod verify;

pub use embedding::{cosine_similarity, read_records, write_records, Embedding, EmbeddingRecord};
pub use error::{Error, Result};
pub use grad::{grad_check, GradCheckReport, Graph, NodeId, Tensor};
pub use latent_fill::{latent_fill, Branch, FillMode, FillOutcome, LatentFillConfig};
pub use model::{ModelDims, ModelParams, SpeakerEncoder, Utterance};
pub use rng::Rng;
