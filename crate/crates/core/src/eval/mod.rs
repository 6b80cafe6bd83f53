//! Evaluation suites: pseudo-perplexity, zero-shot minimal pairs, fine-tuned
//! classification and zero-shot image-to-text retrieval.

mod adapters;
mod finetune;
mod pll;
mod retrieval;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapters::{read_labeled, read_minimal_pairs, write_labeled, write_minimal_pairs};
pub use finetune::{finetune_classify, ClassificationMetrics, Confusion, FinetuneConfig};
pub use pll::{minimal_pair_eval, pair_correct, pll, pll_ids, pppl, pppl_from_parts, MinimalPairReport};
pub use retrieval::{
    class_embeddings, image_embeddings, rank_of, retrieval_accuracy, top_k_accuracy, zero_shot_retrieval,
    RetrievalReport, TemplateSet,
};

/// Results of whichever suites were run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pppl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimal_pairs: Option<MinimalPairReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub finetune: BTreeMap<String, ClassificationMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalReport>,
}

impl EvalReport {
    /// Flat `(row label, value)` view used for tabular reports.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        if let Some(p) = self.pppl {
            rows.push(("pppl".to_string(), p));
        }
        if let Some(m) = &self.minimal_pairs {
            rows.push(("minimal_pairs/overall".to_string(), m.overall));
            for (k, v) in &m.per_phenomenon {
                rows.push((format!("minimal_pairs/{k}"), *v));
            }
        }
        for (task, m) in &self.finetune {
            rows.push((format!("finetune/{task}/accuracy"), m.accuracy));
            rows.push((format!("finetune/{task}/f1"), m.macro_f1));
            rows.push((format!("finetune/{task}/mcc"), m.mcc));
        }
        if let Some(r) = &self.retrieval {
            rows.push(("retrieval/top1".to_string(), r.top1));
            rows.push(("retrieval/top5".to_string(), r.top5));
            for (k, v) in &r.extra {
                rows.push((format!("retrieval/{k}"), *v));
            }
        }
        rows
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("bad eval report: {e}")))
    }
}
