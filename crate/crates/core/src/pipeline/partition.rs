use serde::{Deserialize, Serialize};

use crate::corpus::GroundedPair;
use crate::error::{Error, Result};

/// Held-out share of every stream, taken from the end in canonical order.
pub const HELD_OUT_FRACTION: f64 = 0.05;

/// Amount of text and image data to train on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBudget {
    pub words: u64,
    pub images: u64,
}

impl DataBudget {
    pub fn new(words: u64, images: u64) -> Result<Self> {
        let b = Self { words, images };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.words == 0 && self.images == 0 {
            return Err(Error::Config("data budget has neither words nor images".into()));
        }
        Ok(())
    }
}

/// Loader-level task, one per stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Text,
    Vision,
    Multimodal,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Text, Task::Vision, Task::Multimodal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Text => "text",
            Task::Vision => "vision",
            Task::Multimodal => "multimodal",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown task `{s}`")))
    }
}

/// A prefix of the corpus feeding one loader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    /// Pair ids in canonical order.
    pub pairs: Vec<usize>,
    /// Number of trailing pairs reserved for validation.
    pub held_out: usize,
}

impl Stream {
    fn new(pairs: Vec<usize>) -> Self {
        let n = pairs.len();
        let held_out = if n < 2 { 0 } else { ((n as f64 * HELD_OUT_FRACTION).ceil() as usize).clamp(1, n - 1) };
        Self { pairs, held_out }
    }

    pub fn train(&self) -> &[usize] {
        &self.pairs[..self.pairs.len() - self.held_out]
    }

    pub fn validation(&self) -> &[usize] {
        &self.pairs[self.pairs.len() - self.held_out..]
    }
}

/// Prefix fractions of the corpus each loader draws from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub text: f64,
    pub vision: f64,
    pub multimodal: f64,
}

impl Fractions {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Text => self.text,
            Task::Vision => self.vision,
            Task::Multimodal => self.multimodal,
        }
    }
}

/// The (up to) three budgeted streams.
#[derive(Clone, Debug, PartialEq)]
pub struct LoaderSet {
    pub text: Option<Stream>,
    pub vision: Option<Stream>,
    pub multimodal: Option<Stream>,
    pub fractions: Fractions,
    /// Prefix lengths in pairs, before dropping records that lack the
    /// stream's modality.
    pub prefix_lengths: [usize; 3],
}

impl LoaderSet {
    pub fn stream(&self, task: Task) -> Option<&Stream> {
        match task {
            Task::Text => self.text.as_ref(),
            Task::Vision => self.vision.as_ref(),
            Task::Multimodal => self.multimodal.as_ref(),
        }
    }

    pub fn active_tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.stream(*t).is_some()).collect()
    }
}

/// Smallest prefix length whose cumulative `amount` reaches `budget`.
fn prefix_len(amounts: impl Iterator<Item = u64>, budget: u64) -> Option<usize> {
    if budget == 0 {
        return Some(0);
    }
    let mut acc = 0u64;
    for (i, a) in amounts.enumerate() {
        acc += a;
        if acc >= budget {
            return Some(i + 1);
        }
    }
    None
}

/// Splits a corpus into text, vision and multimodal streams.
///
/// Each modality takes the shortest corpus prefix meeting its budget; the
/// paired stream takes the shorter of the two prefixes. Pairs may appear in a
/// unimodal stream and the paired stream at once.
pub fn partition(corpus: &[GroundedPair], budget: DataBudget) -> Result<LoaderSet> {
    budget.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("cannot partition an empty corpus".into()));
    }
    let capacity = || {
        let available_words = corpus.iter().map(|p| p.word_count as u64).sum();
        let available_images = corpus.iter().filter(|p| p.image.is_some()).count() as u64;
        Error::Capacity {
            requested_words: budget.words,
            requested_images: budget.images,
            available_words,
            available_images,
        }
    };
    let n_text = prefix_len(corpus.iter().map(|p| p.word_count as u64), budget.words).ok_or_else(capacity)?;
    let n_vision =
        prefix_len(corpus.iter().map(|p| p.image.is_some() as u64), budget.images).ok_or_else(capacity)?;
    let n_mm = n_text.min(n_vision);
    let n = corpus.len() as f64;
    let fractions =
        Fractions { text: n_text as f64 / n, vision: n_vision as f64 / n, multimodal: n_mm as f64 / n };

    let collect = |len: usize, keep: &dyn Fn(&GroundedPair) -> bool| -> Option<Stream> {
        let ids: Vec<usize> = corpus[..len].iter().filter(|p| keep(p)).map(|p| p.pair_id).collect();
        (!ids.is_empty()).then(|| Stream::new(ids))
    };
    Ok(LoaderSet {
        text: collect(n_text, &|p| !p.texts.is_empty()),
        vision: collect(n_vision, &|p| p.image.is_some()),
        multimodal: collect(n_mm, &|p| p.image.is_some() && !p.texts.is_empty()),
        fractions,
        prefix_lengths: [n_text, n_vision, n_mm],
    })
}
