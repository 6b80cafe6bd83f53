use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::MinimalPair;
use crate::error::{Error, Result};
use crate::model::{encode_text, mlm_logits, ModelParams};
use crate::pipeline::Vocab;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Masked copies scored per forward pass.
const SCORING_BATCH: usize = 64;

pub(crate) fn log_softmax_at(logits: &Tensor, row: usize, target: usize) -> f64 {
    let r = logits.row(row);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + r.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    r[target] - lse
}

fn check_sentence(params: &ModelParams, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Validation("cannot score an empty sentence".into()));
    }
    if ids.len() + 1 > params.config.max_text_len {
        return Err(Error::Length { len: ids.len() + 1, max: params.config.max_text_len });
    }
    Ok(())
}

/// Pseudo-log-likelihood of each id sequence (no cls). Every position is
/// scored by a copy of the sentence with only that position masked.
pub fn pll_ids(params: &ModelParams, sentences: &[Vec<usize>]) -> Result<Vec<f64>> {
    let mut copies: Vec<(usize, usize)> = Vec::new();
    for (s, ids) in sentences.iter().enumerate() {
        check_sentence(params, ids)?;
        copies.extend((0..ids.len()).map(|t| (s, t)));
    }
    let mut out = vec![0.0; sentences.len()];
    for group in copies.chunks(SCORING_BATCH) {
        let seqs: Vec<Vec<usize>> = group
            .iter()
            .map(|&(s, t)| {
                let mut seq = Vec::with_capacity(sentences[s].len() + 1);
                seq.push(Vocab::CLS_TEXT_ID);
                seq.extend_from_slice(&sentences[s]);
                seq[t + 1] = Vocab::MASK_ID;
                seq
            })
            .collect();
        let mut tape = Tape::new(&params.tensors);
        let enc = encode_text(&mut tape, params, &seqs)?;
        let at: Vec<(usize, usize)> = group.iter().enumerate().map(|(b, &(_, t))| (b, t + 1)).collect();
        let logits = mlm_logits(&mut tape, params, &enc, &at);
        let logits = tape.value(logits);
        for (row, &(s, t)) in group.iter().enumerate() {
            out[s] += log_softmax_at(logits, row, sentences[s][t]);
        }
    }
    Ok(out)
}

pub fn pll(params: &ModelParams, vocab: &Vocab, sentence: &str) -> Result<f64> {
    Ok(pll_ids(params, &[vocab.encode(sentence)?])?[0])
}

/// `exp(-total PLL / total tokens)`.
pub fn pppl_from_parts(plls: &[f64], tokens: usize) -> f64 {
    (-plls.iter().sum::<f64>() / tokens as f64).exp()
}

pub fn pppl(params: &ModelParams, vocab: &Vocab, sentences: &[String]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Validation("pseudo-perplexity needs at least one sentence".into()));
    }
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect::<Result<_>>()?;
    let tokens = ids.iter().map(Vec::len).sum();
    Ok(pppl_from_parts(&pll_ids(params, &ids)?, tokens))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalPairReport {
    /// Accuracy per phenomenon label.
    pub per_phenomenon: BTreeMap<String, f64>,
    /// Unweighted mean over phenomena.
    pub overall: f64,
    pub pairs: usize,
}

/// Credited only when the grammatical sentence scores strictly higher.
pub fn pair_correct(grammatical_pll: f64, ungrammatical_pll: f64) -> bool {
    grammatical_pll > ungrammatical_pll
}

pub fn minimal_pair_eval(params: &ModelParams, vocab: &Vocab, pairs: &[MinimalPair]) -> Result<MinimalPairReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("no minimal pairs to score".into()));
    }
    let mut ids = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        ids.push(vocab.encode(&p.grammatical)?);
        ids.push(vocab.encode(&p.ungrammatical)?);
    }
    let scores = pll_ids(params, &ids)?;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, s) in pairs.iter().zip(scores.chunks(2)) {
        let e = tally.entry(p.phenomenon.clone()).or_default();
        e.0 += usize::from(pair_correct(s[0], s[1]));
        e.1 += 1;
    }
    let per_phenomenon: BTreeMap<String, f64> =
        tally.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect();
    let overall = per_phenomenon.values().sum::<f64>() / per_phenomenon.len() as f64;
    Ok(MinimalPairReport { per_phenomenon, overall, pairs: pairs.len() })
}
