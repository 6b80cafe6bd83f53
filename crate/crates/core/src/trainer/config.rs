use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamGroup;
use crate::objectives::{Objective, DEFAULT_TEMPERATURE};
use crate::pipeline::{DEFAULT_IMAGE_MASK_RATE, DEFAULT_TEXT_MASK_RATE};

/// Optimization and data-handling settings for one pretraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub warmup_steps: u64,
    pub micro_batch_size: usize,
    pub accumulation_steps: usize,
    pub devices: usize,
    pub lr_text: f64,
    pub lr_other: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub p_mask_text: f64,
    pub p_mask_image: f64,
    pub temperature: f64,
    pub validation_interval_steps: u64,
    /// Optimizer updates before the run stops.
    pub max_steps: u64,
    pub seed: u64,
    /// Objectives that contribute to training; loaders whose objectives are
    /// all disabled are not sampled.
    pub objectives: Vec<Objective>,
    pub codebook_iters: usize,
    /// Training images used to fit the patch codebook.
    pub codebook_max_images: usize,
    /// Cap on held-out examples scored per stream at each validation.
    pub max_validation_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 200,
            micro_batch_size: 16,
            accumulation_steps: 4,
            devices: 1,
            lr_text: 7.5e-4,
            lr_other: 1e-3,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            adam_betas: (0.9, 0.999),
            p_mask_text: DEFAULT_TEXT_MASK_RATE,
            p_mask_image: DEFAULT_IMAGE_MASK_RATE,
            temperature: DEFAULT_TEMPERATURE,
            validation_interval_steps: 100,
            max_steps: 5000,
            seed: 0,
            objectives: Objective::ALL.to_vec(),
            codebook_iters: 10,
            codebook_max_images: 256,
            max_validation_examples: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.micro_batch_size == 0 || self.accumulation_steps == 0 {
            return bad("micro_batch_size and accumulation_steps must be positive".into());
        }
        if self.devices != 1 {
            return bad(format!("only single-device training is supported, got devices = {}", self.devices));
        }
        if self.validation_interval_steps == 0 || self.max_validation_examples == 0 {
            return bad("validation interval and example cap must be positive".into());
        }
        for (name, v) in [("lr_text", self.lr_text), ("lr_other", self.lr_other), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.adam_eps > 0.0) || !(self.temperature > 0.0) {
            return bad("adam_eps and temperature must be positive".into());
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        for (name, p) in [("p_mask_text", self.p_mask_text), ("p_mask_image", self.p_mask_image)] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("{name} must lie in (0, 1]"));
            }
        }
        if self.objectives.is_empty() {
            return bad("at least one objective must be enabled".into());
        }
        let pairwise = self.objectives.iter().any(|o| matches!(o, Objective::Itm | Objective::Contrastive));
        if pairwise && self.micro_batch_size < 2 {
            return bad("matching and contrastive objectives need micro_batch_size >= 2".into());
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch_size * self.devices * self.accumulation_steps
    }

    pub fn peak_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::TextEncoder => self.lr_text,
            _ => self.lr_other,
        }
    }
}

/// Linear warmup from 0 to the group's peak over `warmup_steps`, constant after.
pub fn lr_at(config: &TrainConfig, group: ParamGroup, step: u64) -> f64 {
    let peak = config.peak_lr(group);
    if step >= config.warmup_steps {
        peak
    } else {
        peak * step as f64 / config.warmup_steps as f64
    }
}

/// [`lr_at`] with the group given by name.
pub fn lr_at_named(config: &TrainConfig, group: &str, step: u64) -> Result<f64> {
    Ok(lr_at(config, group.parse()?, step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig { warmup_steps: 10_000, ..Default::default() };
        assert!((lr_at(&c, ParamGroup::TextEncoder, 5_000) - 3.75e-4).abs() < 1e-15);
        for g in ParamGroup::ALL {
            assert_eq!(lr_at(&c, g, 0), 0.0);
        }
        assert_eq!(lr_at(&c, ParamGroup::TextEncoder, 10_000), 7.5e-4);
        assert_eq!(lr_at(&c, ParamGroup::VisionEncoder, 20_000), 1e-3);
        assert!(lr_at_named(&c, "decoder", 1).is_err());
    }

    #[test]
    fn effective_batch_arithmetic() {
        let c = TrainConfig { micro_batch_size: 32, accumulation_steps: 64, ..Default::default() };
        assert_eq!(c.effective_batch(), 2048);
        c.validate().unwrap();
        assert!(TrainConfig { devices: 2, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { p_mask_text: 0.0, ..c }.validate().is_err());
    }
}
