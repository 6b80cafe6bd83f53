//! Run and grid configuration files.
//!
//! Both are TOML with nested sections; unknown keys are rejected. A run
//! config looks like
//!
//! ```toml
//! [corpus]
//! classes = 20
//! pairs = 1400
//! seed = 7
//!
//! [budget]
//! words = 10000
//! images = 400
//!
//! [model]
//! hidden_dim = 32
//!
//! [train]
//! max_steps = 200
//!
//! [scheduler]
//! consecutive_increase_limit = 3
//!
//! [eval]
//! suites = ["pppl", "minimal_pairs", "finetune", "retrieval"]
//! ```
//!
//! A grid config holds `words` and `images` lists and a `[base]` run config
//! whose budget is replaced cell by cell.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grounded_lm::model::ModelConfig;
use grounded_lm::pipeline::DataBudget;
use grounded_lm::scheduler::SchedulerConfig;
use grounded_lm::trainer::TrainConfig;
use grounded_lm::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where the pretraining corpus comes from: a pair file, or a world
/// generated from `classes` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Pair file written by `gen-data` or by hand.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// World description matching `path`; generated from `classes` and
    /// `seed` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    pub classes: usize,
    pub pairs: usize,
    pub seed: u64,
    /// Keep only caption texts.
    pub captions_only: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { path: None, world: None, classes: 20, pairs: 1400, seed: 0, captions_only: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Pppl,
    MinimalPairs,
    Finetune,
    Retrieval,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Pppl, Suite::MinimalPairs, Suite::Finetune, Suite::Retrieval];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Pppl => "pppl",
            Suite::MinimalPairs => "minimal_pairs",
            Suite::Finetune => "finetune",
            Suite::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == norm)
            .ok_or_else(|| Error::Usage(format!("unknown suite `{s}` (expected pppl, minimal-pairs, finetune or retrieval)")))
    }
}

/// Evaluation data and budgets. File paths use the adapter formats; when a
/// path is absent the data is generated from the corpus world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub suites: Vec<Suite>,
    /// Seed for generated evaluation data and the fine-tuning head;
    /// defaults to the training seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub pppl_sentences: usize,
    /// One sentence per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pppl_path: Option<PathBuf>,
    pub minimal_pairs_per_phenomenon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimal_pairs_path: Option<PathBuf>,
    pub probe_train: usize,
    pub probe_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_test_path: Option<PathBuf>,
    pub finetune_epochs: usize,
    pub finetune_batch_size: usize,
    pub retrieval_queries: usize,
    /// Largest k reported besides top-1 and top-5.
    pub retrieval_k: usize,
    /// Caption templates; the world's templates when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<Vec<String>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            suites: Suite::ALL.to_vec(),
            seed: None,
            pppl_sentences: 200,
            pppl_path: None,
            minimal_pairs_per_phenomenon: 100,
            minimal_pairs_path: None,
            probe_train: 200,
            probe_test: 200,
            probe_train_path: None,
            probe_test_path: None,
            finetune_epochs: 5,
            finetune_batch_size: 16,
            retrieval_queries: 200,
            retrieval_k: 5,
            templates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    pub budget: DataBudget,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Output directory; not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical serialization, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        sha256_hex(&c.to_toml())
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        // the vocabulary size is filled in from the corpus
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(1);
        model.validate()?;
        self.train.validate()?;
        self.scheduler.validate()?;
        if self.corpus.path.is_none() && (self.corpus.classes == 0 || self.corpus.pairs == 0) {
            return Err(Error::Config("generated corpus needs classes > 0 and pairs > 0".into()));
        }
        if self.eval.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be positive".into()));
        }
        Ok(())
    }

    /// Seed used for generated evaluation data.
    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or(self.train.seed)
    }

    /// Applies a `--seed` override to training and initialization.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.model.seed = s;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub words: Vec<u64>,
    pub images: Vec<u64>,
    pub base: RunConfig,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad grid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid config serializes")
    }

    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.base.out = None;
        sha256_hex(&c.to_toml())
    }

    /// Cells in report order: words-major, images-minor.
    pub fn cells(&self) -> Result<Vec<DataBudget>> {
        if self.words.is_empty() || self.images.is_empty() {
            return Err(Error::Config("grid needs at least one word budget and one image budget".into()));
        }
        let mut out = Vec::new();
        for &w in &self.words {
            for &i in &self.images {
                out.push(DataBudget::new(w, i)?);
            }
        }
        Ok(out)
    }

    pub fn cell_config(&self, budget: DataBudget) -> RunConfig {
        RunConfig { budget, out: None, ..self.base.clone() }
    }
}

/// `10000` as `10K`, `1000000` as `1M`.
pub fn human_count(n: u64) -> String {
    match n {
        n if n >= 1_000_000 && n % 1_000_000 == 0 => format!("{}M", n / 1_000_000),
        n if n >= 1_000 && n % 1_000 == 0 => format!("{}K", n / 1_000),
        n => n.to_string(),
    }
}
