use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::pipeline::Task;
use crate::rng::RngState;
use crate::scheduler::SchedulerState;

/// What was known at one validation phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    /// Optimizer updates applied before this validation.
    pub step: u64,
    pub phase: u64,
    pub config_hash: String,
    /// Mean held-out loss per objective.
    pub val_losses: BTreeMap<Objective, f64>,
    pub scheduler: SchedulerState,
    /// Task-selection stream position after this phase.
    pub rng: RngState,
    /// Parameter blob holding this checkpoint, when one was kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<String>,
}

impl CheckpointManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("bad manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn mlm_loss(&self) -> Option<f64> {
        self.val_losses.get(&Objective::Mlm).copied()
    }

    /// Selection score: the masked-language-modeling loss when present,
    /// otherwise the sum of all recorded losses.
    pub fn selection_loss(&self) -> f64 {
        self.mlm_loss().unwrap_or_else(|| self.val_losses.values().sum())
    }
}

/// Manifest with the lowest selection loss; ties go to the earliest step.
pub fn select_checkpoint(manifests: &[CheckpointManifest]) -> Option<&CheckpointManifest> {
    manifests.iter().min_by(|a, b| a.selection_loss().total_cmp(&b.selection_loss()).then(a.step.cmp(&b.step)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One metrics-log line.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub task: Task,
    pub split: Split,
    pub objective: Objective,
    pub loss: f64,
    pub target_count: usize,
}

impl MetricRecord {
    pub const HEADER: &'static str = "step,task,split,objective,loss,target_count";

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{:?},{}",
            self.step,
            self.task,
            self.split.as_str(),
            self.objective,
            self.loss,
            self.target_count
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Validation(format!("bad metrics line `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            task: f[1].parse().map_err(|_| bad())?,
            split: match f[2] {
                "train" => Split::Train,
                "val" => Split::Val,
                _ => return Err(bad()),
            },
            objective: f[3].parse().map_err(|_| bad())?,
            loss: f[4].parse().map_err(|_| bad())?,
            target_count: f[5].parse().map_err(|_| bad())?,
        })
    }
}
