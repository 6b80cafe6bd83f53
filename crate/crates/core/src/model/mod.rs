//! Text, vision and fusion encoders with their task heads.

mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{
    encode_image, encode_multimodal, encode_text, heads, itm_logits, mim_logits, mlm_logits, mmm_text_logits,
    mmm_vision_logits, project_image, project_text, EncodedBatch, EncodedFusion, EncodedImage, EncodedText, Head,
    HeadOutputs,
};
pub use params::{ModelParams, ParamKind, ParamSpec};

/// Architecture hyperparameters. Every encoder shares width and depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub codebook_size: usize,
    pub patch_side: usize,
    pub image_side: usize,
    pub max_text_len: usize,
    pub projection_dim: usize,
    /// Standard deviation of Gaussian weight initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 256,
            vocab_size: 0,
            codebook_size: 64,
            patch_side: 8,
            image_side: 32,
            max_text_len: 64,
            projection_dim: 32,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("codebook_size", self.codebook_size),
            ("patch_side", self.patch_side),
            ("image_side", self.image_side),
            ("max_text_len", self.max_text_len),
            ("projection_dim", self.projection_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.image_side % self.patch_side != 0 {
            return Err(Error::Config(format!(
                "image_side {} is not divisible by patch_side {}",
                self.image_side, self.patch_side
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn num_patches(&self) -> usize {
        let per_side = self.image_side / self.patch_side;
        per_side * per_side
    }

    /// Raw values per patch (RGB).
    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * 3
    }
}

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    TextEncoder,
    VisionEncoder,
    FusionAndHeads,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::TextEncoder, ParamGroup::VisionEncoder, ParamGroup::FusionAndHeads];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::TextEncoder => "text_encoder",
            ParamGroup::VisionEncoder => "vision_encoder",
            ParamGroup::FusionAndHeads => "fusion_and_heads",
        }
    }
}

impl std::str::FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown parameter group `{s}`")))
    }
}
