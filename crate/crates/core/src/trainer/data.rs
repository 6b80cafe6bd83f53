//! Turns a corpus and budget into tokenized streams and task batches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::corpus::GroundedPair;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::{itm_negatives, Objective, PairBatch, TaskBatch, TextBatch, VisionBatch};
use crate::pipeline::{
    build_codebook, mask_patches, mask_text, partition, tokenize_corpus, Cycler, DataBudget, LoaderSet,
    PatchCodebook, Task, TokenizedPair, Vocab,
};
use crate::rng::{seeded, stream};

/// A text chunk located by pair, text and chunk index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkRef {
    pub pair: usize,
    pub text: usize,
    pub chunk: usize,
}

/// Everything the trainer reads: vocabulary, codebook, tokenized pairs and
/// the budgeted streams.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub codebook: Option<PatchCodebook>,
    pub pairs: Vec<TokenizedPair>,
    pub loaders: LoaderSet,
    pub max_text_len: usize,
}

/// Partitions, fits the codebook on training images and tokenizes.
pub fn prepare_data(
    corpus: &[GroundedPair],
    budget: DataBudget,
    vocab: Vocab,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<PreparedData> {
    let mut loaders = partition(corpus, budget)?;
    // streams none of whose objectives are enabled are dropped
    for task in Task::ALL {
        if !train.objectives.iter().any(|o| o.task() == task) {
            match task {
                Task::Text => loaders.text = None,
                Task::Vision => loaders.vision = None,
                Task::Multimodal => loaders.multimodal = None,
            }
        }
    }
    if loaders.active_tasks().is_empty() {
        return Err(Error::Config("no stream feeds an enabled objective".into()));
    }
    for task in loaders.active_tasks() {
        if loaders.stream(task).is_some_and(|s| s.held_out == 0) {
            return Err(Error::Config(format!("the {task} stream is too small to hold out a validation split")));
        }
    }
    let needs_images = loaders.vision.is_some() || loaders.multimodal.is_some();
    let codebook = if needs_images {
        let mut ids: Vec<usize> = Vec::new();
        for task in [Task::Vision, Task::Multimodal] {
            if let Some(s) = loaders.stream(task) {
                ids.extend_from_slice(s.train());
            }
        }
        ids.sort_unstable();
        ids.dedup();
        let images: Vec<_> =
            ids.iter().filter_map(|&i| corpus[i].image.as_ref()).take(train.codebook_max_images).collect();
        Some(build_codebook(&images, model.codebook_size, model.patch_side, train.codebook_iters, train.seed)?)
    } else {
        None
    };
    let pairs = tokenize_corpus(corpus, &vocab, codebook.as_ref(), model.patch_side, model.max_text_len)?;
    Ok(PreparedData { vocab, codebook, pairs, loaders, max_text_len: model.max_text_len })
}

impl PreparedData {
    /// `base` with vocabulary and codebook sizes taken from the data.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.vocab_size = self.vocab.len();
        if let Some(b) = &self.codebook {
            c.codebook_size = b.k();
        }
        c
    }

    pub fn chunk(&self, r: ChunkRef) -> &[usize] {
        &self.pairs[r.pair].texts[r.text][r.chunk]
    }

    /// Every chunk of the given pairs, in order.
    pub fn chunks_of(&self, pair_ids: &[usize]) -> Vec<ChunkRef> {
        let mut out = Vec::new();
        for &pair in pair_ids {
            for (text, chunks) in self.pairs[pair].texts.iter().enumerate() {
                out.extend((0..chunks.len()).map(|chunk| ChunkRef { pair, text, chunk }));
            }
        }
        out
    }

    pub fn with_images(&self, pair_ids: &[usize]) -> Vec<usize> {
        pair_ids.iter().copied().filter(|&p| self.pairs[p].image.is_some()).collect()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook.as_ref().map_or(0, PatchCodebook::k)
    }

    pub fn text_batch(&self, chunks: &[&[usize]], p: f64, rng: &mut ChaCha8Rng) -> TaskBatch<'_> {
        let seqs = chunks.iter().map(|c| mask_text(&with_cls(c), p, rng)).collect();
        TaskBatch::Text(TextBatch { seqs })
    }

    pub fn vision_batch(&self, pair_ids: &[usize], p: f64, rng: &mut ChaCha8Rng) -> TaskBatch<'_> {
        let k = self.codebook_size();
        let imgs: Vec<_> = pair_ids.iter().map(|&i| self.pairs[i].image.as_ref().expect("image present")).collect();
        TaskBatch::Vision(VisionBatch {
            images: imgs.iter().map(|t| &t.image).collect(),
            patches: imgs.iter().map(|t| mask_patches(&t.codes, k, p, rng)).collect(),
        })
    }

    /// Paired batch; `chunks[i]` is the text drawn for `pair_ids[i]`.
    pub fn pair_batch(
        &self,
        pair_ids: &[usize],
        chunks: &[&[usize]],
        train: &TrainConfig,
        mask_rng: &mut ChaCha8Rng,
        negatives_rng: &mut ChaCha8Rng,
    ) -> Result<TaskBatch<'_>> {
        let k = self.codebook_size();
        let imgs: Vec<_> = pair_ids.iter().map(|&i| self.pairs[i].image.as_ref().expect("image present")).collect();
        let texts: Vec<Vec<usize>> = chunks.iter().map(|c| with_cls(c)).collect();
        let masked_texts = texts.iter().map(|t| mask_text(t, train.p_mask_text, mask_rng)).collect();
        let masked_patches = imgs.iter().map(|t| mask_patches(&t.codes, k, train.p_mask_image, mask_rng)).collect();
        let itm = if train.objectives.contains(&Objective::Itm) {
            itm_negatives(pair_ids.len(), negatives_rng)?
        } else {
            crate::objectives::ItmPlan {
                text_index: (0..pair_ids.len()).collect(),
                labels: vec![1.0; pair_ids.len()],
            }
        };
        Ok(TaskBatch::Multimodal(PairBatch {
            texts,
            masked_texts,
            images: imgs.iter().map(|t| &t.image).collect(),
            masked_patches,
            itm,
        }))
    }
}

pub fn with_cls(ids: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(ids.len() + 1);
    v.push(Vocab::CLS_TEXT_ID);
    v.extend_from_slice(ids);
    v
}

/// Training-side walkers over the three streams.
#[derive(Clone, Debug)]
pub(crate) struct StreamWalkers {
    text: Option<(Vec<ChunkRef>, Cycler)>,
    vision: Option<Cycler>,
    multimodal: Option<Cycler>,
}

impl StreamWalkers {
    pub fn new(data: &PreparedData, seed: u64) -> Result<Self> {
        let text = match &data.loaders.text {
            Some(s) => {
                let chunks = data.chunks_of(s.train());
                let c = Cycler::new((0..chunks.len()).collect(), seeded(seed, stream::TEXT_STREAM))?;
                Some((chunks, c))
            }
            None => None,
        };
        let vision = match &data.loaders.vision {
            Some(s) => Some(Cycler::new(data.with_images(s.train()), seeded(seed, stream::VISION_STREAM))?),
            None => None,
        };
        let multimodal = match &data.loaders.multimodal {
            Some(s) => Some(Cycler::new(data.with_images(s.train()), seeded(seed, stream::MM_STREAM))?),
            None => None,
        };
        Ok(Self { text, vision, multimodal })
    }

    pub fn next_batch<'d>(
        &mut self,
        data: &'d PreparedData,
        task: Task,
        train: &TrainConfig,
        mask_rng: &mut ChaCha8Rng,
        negatives_rng: &mut ChaCha8Rng,
    ) -> Result<TaskBatch<'d>> {
        let n = train.micro_batch_size;
        let missing = || Error::Usage(format!("no {task} stream to draw from"));
        match task {
            Task::Text => {
                let (chunks, c) = self.text.as_mut().ok_or_else(missing)?;
                let picked: Vec<&[usize]> = c.take(n).into_iter().map(|i| data.chunk(chunks[i])).collect();
                Ok(data.text_batch(&picked, train.p_mask_text, mask_rng))
            }
            Task::Vision => {
                let c = self.vision.as_mut().ok_or_else(missing)?;
                Ok(data.vision_batch(&c.take(n), train.p_mask_image, mask_rng))
            }
            Task::Multimodal => {
                let c = self.multimodal.as_mut().ok_or_else(missing)?;
                let ids = c.take(n);
                let chunks: Vec<&[usize]> = ids
                    .iter()
                    .map(|&i| data.pairs[i].draw_chunk(c.rng()).ok_or_else(|| Error::Validation(format!("pair {i} has no text"))))
                    .collect::<Result<_>>()?;
                data.pair_batch(&ids, &chunks, train, mask_rng, negatives_rng)
            }
        }
    }
}

/// Fixed held-out examples per stream.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    pub text: Vec<ChunkRef>,
    pub vision: Vec<usize>,
    /// `(pair, chunk)` for the paired stream.
    pub multimodal: Vec<(usize, ChunkRef)>,
}

impl ValidationSet {
    pub fn new(data: &PreparedData, train: &TrainConfig) -> Self {
        let cap = train.max_validation_examples;
        let text = data
            .loaders
            .text
            .as_ref()
            .map(|s| data.chunks_of(s.validation()).into_iter().take(cap).collect())
            .unwrap_or_default();
        let vision = data
            .loaders
            .vision
            .as_ref()
            .map(|s| data.with_images(s.validation()).into_iter().take(cap).collect())
            .unwrap_or_default();
        let mut rng = seeded(train.seed, stream::VALIDATION);
        let multimodal = data
            .loaders
            .multimodal
            .as_ref()
            .map(|s| {
                data.with_images(s.validation())
                    .into_iter()
                    .take(cap)
                    .filter_map(|p| {
                        let texts: Vec<usize> =
                            (0..data.pairs[p].texts.len()).filter(|&t| !data.pairs[p].texts[t].is_empty()).collect();
                        if texts.is_empty() {
                            return None;
                        }
                        let text = texts[rng.random_range(0..texts.len())];
                        let chunk = rng.random_range(0..data.pairs[p].texts[text].len());
                        Some((p, ChunkRef { pair: p, text, chunk }))
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self { text, vision, multimodal }
    }
}

/// Splits `n` items into batches of at most `size`, folding a trailing
/// singleton into the previous batch so pairwise losses stay defined.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push(start..end);
        start = end;
    }
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}
