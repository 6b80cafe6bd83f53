//! Seed plumbing. Every random consumer gets its own ChaCha stream derived
//! from the run seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named stream ids; values are part of the reproducibility contract.
pub mod stream {
    pub const CORPUS: u64 = 1;
    pub const MINIMAL_PAIRS: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CODEBOOK: u64 = 5;
    pub const TASKS: u64 = 6;
    pub const TEXT_STREAM: u64 = 7;
    pub const VISION_STREAM: u64 = 8;
    pub const MM_STREAM: u64 = 9;
    pub const MASKING: u64 = 10;
    pub const VALIDATION: u64 = 11;
    pub const NEGATIVES: u64 = 12;
    pub const FINETUNE: u64 = 13;
    pub const RETRIEVAL: u64 = 14;
    pub const VALIDATION_MASKING: u64 = 15;
    pub const VALIDATION_NEGATIVES: u64 = 16;
    pub const EVAL_SENTENCES: u64 = 17;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, stored as a decimal string because it is 68 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = seeded(self.seed, self.stream);
        let pos: u128 = self.word_pos.parse().unwrap_or(0);
        rng.set_word_pos(pos);
        rng
    }
}
