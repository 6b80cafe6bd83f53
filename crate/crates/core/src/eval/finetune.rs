use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::model::{encode_text, ModelParams, ParamGroup, ParamKind};
use crate::optim::{AdamW, AdamWConfig};
use crate::pipeline::Vocab;
use crate::rng::{seeded, stream};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Shared by the new head and the text encoder.
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 16, lr: 7.5e-4, weight_decay: 0.1, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mcc: f64,
}

/// `matrix[truth][prediction]` counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub matrix: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self { matrix: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut c = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.matrix[t][p] += 1;
        }
        c
    }

    /// Binary matrix with class 1 as positive.
    pub fn binary(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { matrix: vec![vec![tn, fp], vec![fn_, tp]] }
    }

    fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    fn correct(&self) -> u64 {
        (0..self.matrix.len()).map(|k| self.matrix[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            self.correct() as f64 / n as f64
        }
    }

    /// Unweighted mean of per-class F1; a class with no true or predicted
    /// examples scores 0.
    pub fn macro_f1(&self) -> f64 {
        let k = self.matrix.len();
        let f1: f64 = (0..k)
            .map(|c| {
                let tp = self.matrix[c][c] as f64;
                let truth: f64 = self.matrix[c].iter().sum::<u64>() as f64;
                let pred: f64 = self.matrix.iter().map(|r| r[c]).sum::<u64>() as f64;
                if truth + pred == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (truth + pred)
                }
            })
            .sum();
        f1 / k as f64
    }

    /// Multiclass Matthews correlation; an undefined denominator gives 0.
    pub fn mcc(&self) -> f64 {
        let k = self.matrix.len();
        let s = self.total() as f64;
        let c = self.correct() as f64;
        let truth: Vec<f64> = (0..k).map(|i| self.matrix[i].iter().sum::<u64>() as f64).collect();
        let pred: Vec<f64> = (0..k).map(|j| self.matrix.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
        let cov: f64 = c * s - truth.iter().zip(&pred).map(|(t, p)| t * p).sum::<f64>();
        let var_p = s * s - pred.iter().map(|p| p * p).sum::<f64>();
        let var_t = s * s - truth.iter().map(|t| t * t).sum::<f64>();
        let den = (var_p * var_t).sqrt();
        if den == 0.0 {
            0.0
        } else {
            cov / den
        }
    }

    pub fn metrics(&self) -> ClassificationMetrics {
        ClassificationMetrics { accuracy: self.accuracy(), macro_f1: self.macro_f1(), mcc: self.mcc() }
    }
}

fn encode_labeled(vocab: &Vocab, data: &[LabeledSentence], max_len: usize) -> Result<Vec<Vec<usize>>> {
    data.iter()
        .map(|s| {
            let mut ids = vec![Vocab::CLS_TEXT_ID];
            ids.extend(vocab.encode(&s.text)?);
            ids.truncate(max_len);
            Ok(ids)
        })
        .collect()
}

fn head_logits(tape: &mut Tape, params: &ModelParams, head: (usize, usize), seqs: &[Vec<usize>]) -> Result<crate::tape::Var> {
    let enc = encode_text(tape, params, seqs)?;
    let (w, b) = (tape.param(head.0), tape.param(head.1));
    Ok(tape.linear(enc.cls, w, b))
}

/// Trains a fresh linear head on the text cls together with the text encoder
/// and reports test metrics. `params` is not modified.
pub fn finetune_classify(
    params: &ModelParams,
    vocab: &Vocab,
    train: &[LabeledSentence],
    test: &[LabeledSentence],
    config: &FinetuneConfig,
) -> Result<ClassificationMetrics> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("fine-tuning needs nonempty train and test sets".into()));
    }
    let classes = train.iter().chain(test).map(|s| s.label).max().unwrap_or(0) + 1;
    let first = train[0].label;
    if train.iter().all(|s| s.label == first) {
        return Err(Error::Config("fine-tuning set has a single label".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("fine-tuning batch size must be positive".into()));
    }
    let max_len = params.config.max_text_len;
    let train_ids = encode_labeled(vocab, train, max_len)?;
    let test_ids = encode_labeled(vocab, test, max_len)?;

    let mut rng = seeded(config.seed, stream::FINETUNE);
    let hidden = params.config.hidden_dim;
    let normal = Normal::new(0.0, params.config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let w: Vec<f64> = (0..hidden * classes).map(|_| normal.sample(&mut rng)).collect();
    let mut weights = params.tensors.clone();
    let head = (weights.len(), weights.len() + 1);
    weights.push(Tensor::from_vec(hidden, classes, w));
    weights.push(Tensor::zeros(1, classes));

    let mut decay: Vec<bool> = params.specs.iter().map(|s| matches!(s.kind, ParamKind::Weight | ParamKind::Identity)).collect();
    decay.extend([true, false]);
    let trainable: Vec<bool> = (0..weights.len())
        .map(|i| i >= params.len() || params.group_of(i) == ParamGroup::TextEncoder)
        .collect();
    let adam = AdamWConfig { betas: (0.9, 0.999), eps: 1e-8, weight_decay: config.weight_decay };
    let mut opt = AdamW::new(adam, &weights, decay);
    let lrs = vec![config.lr; weights.len()];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let seqs: Vec<Vec<usize>> = batch.iter().map(|&i| train_ids[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
            let mut tape = Tape::new(&weights);
            let logits = head_logits(&mut tape, params, head, &seqs)?;
            let loss = tape.cross_entropy(logits, &labels);
            let grads: Vec<Option<Tensor>> = tape
                .backward(loss)
                .into_params()
                .into_iter()
                .zip(&trainable)
                .map(|(g, &t)| g.filter(|_| t))
                .collect();
            drop(tape);
            opt.step(&mut weights, &grads, &lrs);
        }
    }

    let mut predicted = Vec::with_capacity(test.len());
    for batch in test_ids.chunks(config.batch_size.max(32)) {
        let mut tape = Tape::new(&weights);
        let logits = head_logits(&mut tape, params, head, batch)?;
        let logits = tape.value(logits);
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let best = (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            predicted.push(best);
        }
    }
    let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
    Ok(Confusion::from_predictions(classes, &truth, &predicted).metrics())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Binary MCC written directly from the four counts.
    fn binary_mcc(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den
        }
    }

    #[test]
    fn mcc_fixtures() {
        let perfect = Confusion::binary(5, 5, 0, 0);
        assert!((perfect.mcc() - 1.0).abs() < 1e-6);
        assert_eq!(perfect.accuracy(), 1.0);
        let c = Confusion::binary(4, 3, 1, 2);
        assert!((c.mcc() - 10.0 / 600f64.sqrt()).abs() < 1e-6);
        assert!((c.mcc() - 0.4082).abs() < 1e-4);
        // always-positive predictor on a balanced set
        let always = Confusion::binary(5, 0, 5, 0);
        assert_eq!(always.mcc(), 0.0);
        assert_eq!(always.accuracy(), 0.5);
        assert_eq!(Confusion::new(3).mcc(), 0.0);
    }

    #[test]
    fn multiclass_mcc_reduces_to_binary() {
        for (tp, tn, fp, fn_) in [(3, 9, 2, 1), (0, 4, 4, 0), (7, 1, 0, 3), (10, 10, 10, 10)] {
            let c = Confusion::binary(tp, tn, fp, fn_);
            let want = binary_mcc(tp as f64, tn as f64, fp as f64, fn_ as f64);
            assert!((c.mcc() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_of_hand_matrix() {
        let c = Confusion::binary(4, 3, 1, 2);
        // positive F1 = 8/11, negative F1 = 6/9
        assert!((c.macro_f1() - (8.0 / 11.0 + 6.0 / 9.0) / 2.0).abs() < 1e-12);
    }
}
