//! Controlled multimodal-versus-unimodal masked-modeling pretraining.
//!
//! A three-encoder transformer (text, vision, fusion) is trained on budgeted
//! text, vision and paired streams under a modality-aware early-stopping
//! scheduler, then evaluated on pseudo-perplexity, minimal pairs, fine-tuning
//! probes and zero-shot retrieval.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scheduler;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
