use rand::Rng;
use serde::{Deserialize, Serialize};

use super::partition::{Fractions, LoaderSet, Task};
use crate::error::{Error, Result};

/// Unnormalized per-task sampling weights; absent tasks carry exactly 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub text: f64,
    pub vision: f64,
    pub multimodal: f64,
}

impl SamplingWeights {
    pub fn new(text: f64, vision: f64, multimodal: f64) -> Self {
        Self { text, vision, multimodal }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Text => self.text,
            Task::Vision => self.vision,
            Task::Multimodal => self.multimodal,
        }
    }

    pub fn set(&mut self, task: Task, w: f64) {
        match task {
            Task::Text => self.text = w,
            Task::Vision => self.vision = w,
            Task::Multimodal => self.multimodal = w,
        }
    }

    pub fn total(&self) -> f64 {
        self.text + self.vision + self.multimodal
    }

    pub fn active(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.get(*t) > 0.0).collect()
    }

    /// Selection probabilities: weights renormalized over positive entries.
    pub fn probabilities(&self) -> Option<Self> {
        let total: f64 = Task::ALL.iter().map(|t| self.get(*t).max(0.0)).sum();
        (total > 0.0).then(|| {
            Self::new(self.text.max(0.0) / total, self.vision.max(0.0) / total, self.multimodal.max(0.0) / total)
        })
    }

    /// Weights proportional to `fractions`, normalized; replaced by the uniform
    /// distribution over active tasks unless text is strictly the largest.
    pub fn from_fractions(fractions: Fractions) -> Result<Self> {
        let raw = Self::new(fractions.text, fractions.vision, fractions.multimodal);
        if Task::ALL.iter().any(|t| !(raw.get(*t) >= 0.0)) {
            return Err(Error::Config(format!("invalid loader fractions {fractions:?}")));
        }
        let normalized = raw.probabilities().ok_or_else(|| Error::Config("no active loaders".into()))?;
        let active = normalized.active();
        let text = normalized.text;
        let predominant = Task::ALL
            .iter()
            .filter(|t| **t != Task::Text && normalized.get(**t) > 0.0)
            .all(|t| text > normalized.get(*t))
            && text > 0.0;
        if predominant {
            return Ok(normalized);
        }
        let u = 1.0 / active.len() as f64;
        let mut out = Self::zero();
        for t in active {
            out.set(t, u);
        }
        Ok(out)
    }

    fn as_fractions(&self) -> Fractions {
        Fractions { text: self.text, vision: self.vision, multimodal: self.multimodal }
    }

    /// Re-applies the initialization rule to these weights.
    pub fn renormalized(&self) -> Result<Self> {
        Self::from_fractions(self.as_fractions())
    }
}

/// Initial weights for a loader set.
pub fn init_sampling_weights(loaders: &LoaderSet) -> Result<SamplingWeights> {
    let mut f = loaders.fractions;
    // a prefix can be non-empty while its stream is not (e.g. no paired records)
    for t in Task::ALL {
        if loaders.stream(t).is_none() {
            match t {
                Task::Text => f.text = 0.0,
                Task::Vision => f.vision = 0.0,
                Task::Multimodal => f.multimodal = 0.0,
            }
        }
    }
    SamplingWeights::from_fractions(f)
}

/// Categorical draw over the renormalized positive weights. Consumes exactly
/// one `f64` from `rng` per call.
pub fn next_task<R: Rng>(weights: &SamplingWeights, rng: &mut R) -> Result<Task> {
    let probs = weights.probabilities().ok_or(Error::SchedulingExhausted)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for t in Task::ALL {
        let p = probs.get(t);
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(t);
        if u < acc {
            return Ok(t);
        }
    }
    Ok(last.expect("at least one positive weight"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn fr(text: f64, vision: f64, multimodal: f64) -> Fractions {
        Fractions { text, vision, multimodal }
    }

    #[test]
    fn proportional_when_text_predominates() {
        let w = SamplingWeights::from_fractions(fr(0.10, 0.01, 0.01)).unwrap();
        assert!((w.text - 0.833).abs() < 1e-3);
        assert!((w.vision - 0.083).abs() < 1e-3);
        assert!((w.multimodal - 0.083).abs() < 1e-3);
    }

    #[test]
    fn uniform_when_text_is_not_predominant() {
        let w = SamplingWeights::from_fractions(fr(0.01, 0.73, 0.01)).unwrap();
        for t in Task::ALL {
            assert!((w.get(t) - 1.0 / 3.0).abs() < 1e-12);
        }
        // ties count as not predominant
        let w = SamplingWeights::from_fractions(fr(0.5, 0.5, 0.0)).unwrap();
        assert_eq!((w.text, w.vision, w.multimodal), (0.5, 0.5, 0.0));
    }

    #[test]
    fn single_stream_gets_all_weight() {
        assert_eq!(SamplingWeights::from_fractions(fr(0.2, 0.0, 0.0)).unwrap().text, 1.0);
        assert_eq!(SamplingWeights::from_fractions(fr(0.0, 0.3, 0.0)).unwrap().vision, 1.0);
    }

    #[test]
    fn next_task_degenerate_and_exhausted() {
        let mut rng = seeded(1, 1);
        let w = SamplingWeights::new(1.0, 0.0, 0.0);
        assert!((0..100).all(|_| next_task(&w, &mut rng).unwrap() == Task::Text));
        assert!(matches!(next_task(&SamplingWeights::zero(), &mut rng), Err(Error::SchedulingExhausted)));
    }

    #[test]
    fn next_task_monte_carlo_frequency() {
        let mut rng = seeded(42, 6);
        let w = SamplingWeights::new(0.5, 0.5, 0.0);
        let n = 10_000;
        let text = (0..n).filter(|_| next_task(&w, &mut rng).unwrap() == Task::Text).count();
        let f = text as f64 / n as f64;
        assert!((0.48..=0.52).contains(&f), "text frequency {f}");
    }
}
