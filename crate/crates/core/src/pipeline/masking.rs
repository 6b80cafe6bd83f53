use rand::Rng;

use super::vocab::Vocab;

pub const DEFAULT_TEXT_MASK_RATE: f64 = 0.15;
pub const DEFAULT_IMAGE_MASK_RATE: f64 = 0.40;

/// A token sequence with some positions replaced by a mask id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input: Vec<usize>,
    /// Original id at masked positions, `None` (ignored) elsewhere.
    pub targets: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

impl MaskedSequence {
    pub fn unmasked(ids: &[usize]) -> Self {
        Self { input: ids.to_vec(), targets: vec![None; ids.len()], mask: vec![false; ids.len()] }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `(position, target id)` for every masked position.
    pub fn target_positions(&self) -> Vec<(usize, usize)> {
        self.targets.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t))).collect()
    }

    /// Targets merged back into the inputs.
    pub fn reconstruct(&self) -> Vec<usize> {
        self.input.iter().zip(&self.targets).map(|(i, t)| t.unwrap_or(*i)).collect()
    }
}

/// Masks each position where `maskable` holds with probability `p`, drawing
/// one `f64` per maskable position. If `p > 0` and nothing was masked, the
/// first maskable position is forced.
pub fn mask_positions<R: Rng>(
    ids: &[usize],
    maskable: impl Fn(usize) -> bool,
    mask_id: usize,
    p: f64,
    rng: &mut R,
) -> MaskedSequence {
    let mut out = MaskedSequence::unmasked(ids);
    let mut first = None;
    for (i, &id) in ids.iter().enumerate() {
        if !maskable(id) {
            continue;
        }
        first.get_or_insert(i);
        if rng.random::<f64>() < p {
            out.mask[i] = true;
        }
    }
    if p > 0.0 && out.masked_count() == 0 {
        if let Some(i) = first {
            out.mask[i] = true;
        }
    }
    for i in 0..ids.len() {
        if out.mask[i] {
            out.targets[i] = Some(ids[i]);
            out.input[i] = mask_id;
        }
    }
    out
}

/// Masks non-special text tokens.
pub fn mask_text<R: Rng>(ids: &[usize], p: f64, rng: &mut R) -> MaskedSequence {
    mask_positions(ids, |id| id >= 5, Vocab::MASK_ID, p, rng)
}

/// Masks patch tokens; masked inputs become `codebook_size`, one past the
/// last codebook id.
pub fn mask_patches<R: Rng>(tokens: &[usize], codebook_size: usize, p: f64, rng: &mut R) -> MaskedSequence {
    mask_positions(tokens, |_| true, codebook_size, p, rng)
}
