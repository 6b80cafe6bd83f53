use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Image;
use crate::error::{Error, Result};
use crate::model::{encode_image, encode_text, project_image, project_text, ModelParams};
use crate::pipeline::Vocab;
use crate::tape::Tape;
use crate::tensor::Tensor;

const EMBED_BATCH: usize = 64;

/// Caption templates, each with exactly one `{}` slot for the class name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: Vec<String>,
}

impl TemplateSet {
    pub fn new(templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("template set is empty".into()));
        }
        if let Some(t) = templates.iter().find(|t| t.matches("{}").count() != 1) {
            return Err(Error::Config(format!("template `{t}` must contain exactly one {{}} slot")));
        }
        Ok(Self { templates })
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn fill(&self, class_name: &str) -> Vec<String> {
        self.templates.iter().map(|t| t.replace("{}", class_name)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub top1: f64,
    pub top5: f64,
    /// Further `topK` accuracies that were requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// One template-averaged unit embedding per class: each filled template is
/// embedded and normalized, the embeddings are averaged, and the mean is
/// renormalized.
pub fn class_embeddings(
    params: &ModelParams,
    vocab: &Vocab,
    class_names: &[String],
    templates: &TemplateSet,
) -> Result<Tensor> {
    let dim = params.config.projection_dim;
    let per_class = templates.templates().len();
    let mut seqs = Vec::with_capacity(class_names.len() * per_class);
    for name in class_names {
        for caption in templates.fill(name) {
            let mut ids = vec![Vocab::CLS_TEXT_ID];
            ids.extend(vocab.encode(&caption)?);
            seqs.push(ids);
        }
    }
    let mut sums = Tensor::zeros(class_names.len(), dim);
    for (g, group) in seqs.chunks(EMBED_BATCH).enumerate() {
        let mut tape = Tape::new(&params.tensors);
        let enc = encode_text(&mut tape, params, group)?;
        let z = project_text(&mut tape, params, &enc);
        let z = tape.value(z);
        for r in 0..group.len() {
            let class = (g * EMBED_BATCH + r) / per_class;
            for (s, v) in sums.row_mut(class).iter_mut().zip(z.row(r)) {
                *s += v;
            }
        }
    }
    for c in 0..class_names.len() {
        normalize(sums.row_mut(c));
    }
    Ok(sums)
}

pub fn image_embeddings(params: &ModelParams, images: &[&Image]) -> Result<Tensor> {
    let mut out = Tensor::zeros(images.len(), params.config.projection_dim);
    for (g, group) in images.chunks(EMBED_BATCH).enumerate() {
        let mut tape = Tape::new(&params.tensors);
        let enc = encode_image(&mut tape, params, group, None)?;
        let z = project_image(&mut tape, params, &enc);
        let z = tape.value(z);
        for r in 0..group.len() {
            out.row_mut(g * EMBED_BATCH + r).copy_from_slice(z.row(r));
        }
    }
    Ok(out)
}

/// 0-based rank of `truth` among `scores`: classes scoring higher come
/// first, and equal scores are ordered by class index.
pub fn rank_of(scores: &[f64], truth: usize) -> usize {
    let s = scores[truth];
    scores.iter().enumerate().filter(|&(j, &x)| x > s || (x == s && j < truth)).count()
}

/// Fraction of queries whose true class ranks within each `k`.
pub fn top_k_accuracy(scores: &Tensor, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let classes = scores.cols();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > classes) {
        return Err(Error::Usage(format!("top-{k} accuracy is undefined for {classes} classes")));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no retrieval queries".into()));
    }
    let ranks: Vec<usize> = labels.iter().enumerate().map(|(q, &t)| rank_of(scores.row(q), t)).collect();
    Ok(ks.iter().map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / labels.len() as f64).collect())
}

/// Ranks template-averaged class captions for each query image by cosine
/// similarity and reports the top-k accuracy for each of `ks`.
pub fn retrieval_accuracy(
    params: &ModelParams,
    vocab: &Vocab,
    queries: &[(&Image, usize)],
    class_names: &[String],
    templates: &TemplateSet,
    ks: &[usize],
) -> Result<Vec<f64>> {
    if class_names.len() < 2 {
        return Err(Error::Usage("retrieval needs at least two classes".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > class_names.len()) {
        return Err(Error::Usage(format!("top-{k} accuracy is undefined for {} classes", class_names.len())));
    }
    if let Some(&(_, c)) = queries.iter().find(|(_, c)| *c >= class_names.len()) {
        return Err(Error::Validation(format!("query label {c} has no class name")));
    }
    let classes = class_embeddings(params, vocab, class_names, templates)?;
    let images: Vec<&Image> = queries.iter().map(|(i, _)| *i).collect();
    let z = image_embeddings(params, &images)?;
    let scores = z.matmul(&classes, false, true);
    let labels: Vec<usize> = queries.iter().map(|(_, c)| *c).collect();
    top_k_accuracy(&scores, &labels, ks)
}

/// Top-1 and top-5 zero-shot retrieval accuracy.
pub fn zero_shot_retrieval(
    params: &ModelParams,
    vocab: &Vocab,
    queries: &[(&Image, usize)],
    class_names: &[String],
    templates: &TemplateSet,
) -> Result<RetrievalReport> {
    let acc = retrieval_accuracy(params, vocab, queries, class_names, templates, &[1, 5])?;
    Ok(RetrievalReport { top1: acc[0], top5: acc[1], extra: BTreeMap::new() })
}
