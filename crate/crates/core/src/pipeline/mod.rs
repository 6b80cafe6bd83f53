//! Budgeted stream partitioning, tokenization, masking and task sampling.

mod codebook;
mod dataset;
mod masking;
mod partition;
mod sampling;
mod vocab;

pub use codebook::{build_codebook, PatchCodebook, DEFAULT_CODEBOOK_SIZE};
pub use dataset::{chunk_text, tokenize_corpus, Cycler, TokenizedImage, TokenizedPair};
pub use masking::{
    mask_patches, mask_positions, mask_text, MaskedSequence, DEFAULT_IMAGE_MASK_RATE, DEFAULT_TEXT_MASK_RATE,
};
pub use partition::{partition, DataBudget, Fractions, LoaderSet, Stream, Task, HELD_OUT_FRACTION};
pub use sampling::{init_sampling_weights, next_task, SamplingWeights};
pub use vocab::{Vocab, CLS_IMAGE, CLS_MM, CLS_TEXT, MASK, PAD};

/// First line of text artifacts saved with a configuration tag.
pub const TAG_PREFIX: &str = "# config_hash ";
