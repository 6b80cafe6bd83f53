//! The five pretraining losses and the per-task step loss.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Image;
use crate::error::{Error, Result};
use crate::model::{
    encode_image, encode_multimodal, encode_text, itm_logits, mim_logits, mlm_logits, mmm_text_logits,
    mmm_vision_logits, project_image, project_text, EncodedText, ModelParams,
};
use crate::pipeline::{MaskedSequence, Task};
use crate::tape::{RowRef, Tape, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    Mim,
    MmmText,
    MmmVision,
    Itm,
    Contrastive,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::Mlm,
        Objective::Mim,
        Objective::MmmText,
        Objective::MmmVision,
        Objective::Itm,
        Objective::Contrastive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Mim => "mim",
            Objective::MmmText => "mmm_text",
            Objective::MmmVision => "mmm_vision",
            Objective::Itm => "itm",
            Objective::Contrastive => "contrastive",
        }
    }

    /// The loader feeding this objective.
    pub fn task(self) -> Task {
        match self {
            Objective::Mlm => Task::Text,
            Objective::Mim => Task::Vision,
            _ => Task::Multimodal,
        }
    }

    pub fn for_task(task: Task) -> Vec<Objective> {
        Objective::ALL.into_iter().filter(|o| o.task() == task).collect()
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// A scalar loss and the number of targets behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub loss: f64,
    pub count: usize,
}

/// Mean cross-entropy of `logits` rows against `targets`; used for the
/// masked-token objectives.
pub fn masked_token_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    Ok(tape.cross_entropy(logits, targets))
}

/// Mean binary cross-entropy of `[n, 1]` match logits.
pub fn itm_loss(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::EmptyTargets);
    }
    Ok(tape.bce_with_logits(logits, labels))
}

/// Symmetric InfoNCE over the in-batch cosine-similarity matrix.
pub fn contrastive_loss(tape: &mut Tape, z_text: Var, z_image: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let b = tape.value(z_text).rows();
    if b < 2 || tape.value(z_image).rows() != b {
        return Err(Error::Usage(format!("contrastive loss needs matching batches of at least 2, got {b}")));
    }
    let sim = tape.matmul(z_image, z_text, true);
    let logits = tape.scale(sim, 1.0 / temperature);
    let targets: Vec<usize> = (0..b).collect();
    let i2t = tape.cross_entropy(logits, &targets);
    let t_logits = tape.transpose(logits);
    let t2i = tape.cross_entropy(t_logits, &targets);
    Ok(tape.weighted_sum(&[(i2t, 0.5), (t2i, 0.5)]))
}

/// Which text each image is paired with for matching, and the match labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ItmPlan {
    pub text_index: Vec<usize>,
    pub labels: Vec<f64>,
}

/// Picks `batch / 2` seeded positions and gives each a text from another
/// position: a cyclic derangement among the picks, or any other position
/// when only one is picked.
pub fn itm_negatives<R: Rng>(batch: usize, rng: &mut R) -> Result<ItmPlan> {
    if batch < 2 {
        return Err(Error::Usage("image-text matching needs a batch of at least 2".into()));
    }
    let mut text_index: Vec<usize> = (0..batch).collect();
    let mut labels = vec![1.0; batch];
    let mut picks = sample(rng, batch, batch / 2).into_vec();
    picks.sort_unstable();
    if picks.len() == 1 {
        let i = picks[0];
        let j = (i + 1 + rng.random_range(0..batch - 1)) % batch;
        text_index[i] = j;
    } else {
        // Sattolo's algorithm yields a single cycle, hence no fixed points
        let mut perm = picks.clone();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..i);
            perm.swap(i, j);
        }
        for (p, q) in picks.iter().zip(&perm) {
            text_index[*p] = *q;
        }
    }
    for &p in &picks {
        labels[p] = 0.0;
    }
    Ok(ItmPlan { text_index, labels })
}

/// Masked text sequences, each starting with the text cls.
#[derive(Clone, Debug)]
pub struct TextBatch {
    pub seqs: Vec<MaskedSequence>,
}

#[derive(Clone, Debug)]
pub struct VisionBatch<'a> {
    pub images: Vec<&'a Image>,
    /// Masked codebook ids per image.
    pub patches: Vec<MaskedSequence>,
}

#[derive(Clone, Debug)]
pub struct PairBatch<'a> {
    /// Unmasked texts with cls, for matching and contrastive objectives.
    pub texts: Vec<Vec<usize>>,
    pub masked_texts: Vec<MaskedSequence>,
    pub images: Vec<&'a Image>,
    pub masked_patches: Vec<MaskedSequence>,
    pub itm: ItmPlan,
}

#[derive(Clone, Debug)]
pub enum TaskBatch<'a> {
    Text(TextBatch),
    Vision(VisionBatch<'a>),
    Multimodal(PairBatch<'a>),
}

impl TaskBatch<'_> {
    pub fn task(&self) -> Task {
        match self {
            TaskBatch::Text(_) => Task::Text,
            TaskBatch::Vision(_) => Task::Vision,
            TaskBatch::Multimodal(_) => Task::Multimodal,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskBatch::Text(b) => b.seqs.len(),
            TaskBatch::Vision(b) => b.images.len(),
            TaskBatch::Multimodal(b) => b.images.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of one micro-batch: the equal-weight sum of its objectives, plus each
/// objective's own loss node and target count.
pub struct StepLoss {
    pub total: Var,
    pub parts: Vec<(Objective, Var, usize)>,
}

fn flat_targets(seqs: &[MaskedSequence], offset: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut at = Vec::new();
    let mut targets = Vec::new();
    for (b, s) in seqs.iter().enumerate() {
        for (pos, t) in s.target_positions() {
            at.push((b, pos - offset));
            targets.push(t);
        }
    }
    (at, targets)
}

fn permute_text(tape: &mut Tape, text: &EncodedText, order: &[usize]) -> EncodedText {
    let l = text.seq_len;
    let index: Vec<RowRef> =
        order.iter().flat_map(|&b| (0..l).map(move |t| RowRef { source: 0, row: b * l + t })).collect();
    let states = tape.rows(&[text.states], &index);
    let cls = tape.select_rows(text.cls, order);
    EncodedText {
        states,
        batch: order.len(),
        seq_len: l,
        lengths: order.iter().map(|&b| text.lengths[b]).collect(),
        cls,
    }
}

/// Builds the enabled objectives of `batch` on `tape`. Returns `None` when no
/// enabled objective belongs to the batch's task.
pub fn task_loss(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &TaskBatch,
    enabled: &[Objective],
    temperature: f64,
) -> Result<Option<StepLoss>> {
    let on = |o: Objective| enabled.contains(&o);
    let mut parts = Vec::new();
    match batch {
        TaskBatch::Text(b) if on(Objective::Mlm) => {
            let inputs: Vec<Vec<usize>> = b.seqs.iter().map(|s| s.input.clone()).collect();
            let enc = encode_text(tape, params, &inputs)?;
            let (at, targets) = flat_targets(&b.seqs, 0);
            let logits = mlm_logits(tape, params, &enc, &at);
            parts.push((Objective::Mlm, masked_token_loss(tape, logits, &targets)?, targets.len()));
        }
        TaskBatch::Vision(b) if on(Objective::Mim) => {
            let masks: Vec<Vec<bool>> = b.patches.iter().map(|s| s.mask.clone()).collect();
            let enc = encode_image(tape, params, &b.images, Some(&masks))?;
            let (at, targets) = flat_targets(&b.patches, 0);
            let logits = mim_logits(tape, params, &enc, &at);
            parts.push((Objective::Mim, masked_token_loss(tape, logits, &targets)?, targets.len()));
        }
        TaskBatch::Multimodal(b) => {
            let n = b.images.len();
            if b.texts.len() != n || b.masked_texts.len() != n || b.masked_patches.len() != n {
                return Err(Error::Usage("multimodal batch needs one text and one image per pair".into()));
            }
            if on(Objective::Contrastive) || on(Objective::Itm) {
                let t = encode_text(tape, params, &b.texts)?;
                let i = encode_image(tape, params, &b.images, None)?;
                if on(Objective::Contrastive) {
                    let zt = project_text(tape, params, &t);
                    let zi = project_image(tape, params, &i);
                    parts.push((Objective::Contrastive, contrastive_loss(tape, zt, zi, temperature)?, n));
                }
                if on(Objective::Itm) {
                    if b.itm.labels.len() != n {
                        return Err(Error::Usage("matching plan does not fit the batch".into()));
                    }
                    let shuffled = permute_text(tape, &t, &b.itm.text_index);
                    let f = encode_multimodal(tape, params, &shuffled, &i)?;
                    let logits = itm_logits(tape, params, &f);
                    parts.push((Objective::Itm, itm_loss(tape, logits, &b.itm.labels)?, n));
                }
            }
            if on(Objective::MmmText) || on(Objective::MmmVision) {
                let inputs: Vec<Vec<usize>> = b.masked_texts.iter().map(|s| s.input.clone()).collect();
                let masks: Vec<Vec<bool>> = b.masked_patches.iter().map(|s| s.mask.clone()).collect();
                let t = encode_text(tape, params, &inputs)?;
                let i = encode_image(tape, params, &b.images, Some(&masks))?;
                let f = encode_multimodal(tape, params, &t, &i)?;
                if on(Objective::MmmText) {
                    let (at, targets) = flat_targets(&b.masked_texts, 0);
                    let logits = mmm_text_logits(tape, params, &f, &at);
                    parts.push((Objective::MmmText, masked_token_loss(tape, logits, &targets)?, targets.len()));
                }
                if on(Objective::MmmVision) {
                    let (at, targets) = flat_targets(&b.masked_patches, 0);
                    let logits = mmm_vision_logits(tape, params, &f, &at);
                    parts.push((Objective::MmmVision, masked_token_loss(tape, logits, &targets)?, targets.len()));
                }
            }
        }
        _ => {}
    }
    if parts.is_empty() {
        return Ok(None);
    }
    let weighted: Vec<(Var, f64)> = parts.iter().map(|(_, v, _)| (*v, 1.0)).collect();
    let total = tape.weighted_sum(&weighted);
    Ok(Some(StepLoss { total, parts }))
}
