//! Tokenized views of the corpus and the per-stream example cyclers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::codebook::PatchCodebook;
use super::vocab::Vocab;
use crate::corpus::{split_sentences, GroundedPair, Image};
use crate::error::{Error, Result};

/// Splits a text into sentence-packed chunks of at most `max_tokens` ids.
/// Sentences longer than a chunk are cut into consecutive pieces.
pub fn chunk_text(vocab: &Vocab, text: &str, max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    if max_tokens == 0 {
        return Err(Error::Config("chunk length must be positive".into()));
    }
    let mut chunks = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for sentence in split_sentences(text) {
        let ids = vocab.encode(&sentence)?;
        if !current.is_empty() && current.len() + ids.len() > max_tokens {
            chunks.push(std::mem::take(&mut current));
        }
        for piece in ids.chunks(max_tokens) {
            if current.len() + piece.len() > max_tokens {
                chunks.push(std::mem::take(&mut current));
            }
            current.extend_from_slice(piece);
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    Ok(chunks)
}

/// Image with its patch codes.
#[derive(Clone, Debug)]
pub struct TokenizedImage {
    pub image: Image,
    pub codes: Vec<usize>,
}

/// One corpus pair after tokenization: chunks per text, codes per patch.
#[derive(Clone, Debug)]
pub struct TokenizedPair {
    pub texts: Vec<Vec<Vec<usize>>>,
    pub image: Option<TokenizedImage>,
}

impl TokenizedPair {
    pub fn chunks(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.texts.iter().flatten()
    }

    /// A uniformly drawn text, then a uniformly drawn chunk of it.
    pub fn draw_chunk<R: Rng>(&self, rng: &mut R) -> Option<&[usize]> {
        let texts: Vec<&Vec<Vec<usize>>> = self.texts.iter().filter(|t| !t.is_empty()).collect();
        if texts.is_empty() {
            return None;
        }
        let t = texts[rng.random_range(0..texts.len())];
        Some(&t[rng.random_range(0..t.len())])
    }
}

/// Tokenizes every pair. Text chunks hold at most `max_text_len - 1` ids so
/// a cls token still fits.
pub fn tokenize_corpus(
    corpus: &[GroundedPair],
    vocab: &Vocab,
    codebook: Option<&PatchCodebook>,
    patch_side: usize,
    max_text_len: usize,
) -> Result<Vec<TokenizedPair>> {
    if max_text_len < 2 {
        return Err(Error::Config("max_text_len must leave room for a cls token".into()));
    }
    corpus
        .iter()
        .map(|p| {
            let texts = p
                .texts
                .iter()
                .map(|t| chunk_text(vocab, &t.text, max_text_len - 1))
                .collect::<Result<Vec<_>>>()?;
            let image = match (&p.image, codebook) {
                (Some(img), Some(book)) => {
                    img.validate_patches(patch_side)?;
                    Some(TokenizedImage { image: img.clone(), codes: book.tokenize(img, patch_side) })
                }
                _ => None,
            };
            Ok(TokenizedPair { texts, image })
        })
        .collect()
}

/// Endless reshuffling walk over a fixed item list.
#[derive(Clone, Debug)]
pub struct Cycler {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl Cycler {
    pub fn new(items: Vec<usize>, rng: ChaCha8Rng) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("cannot cycle over an empty stream".into()));
        }
        let mut c = Self { order: Vec::new(), items, pos: 0, epoch: 0, rng };
        c.reshuffle();
        Ok(c)
    }

    fn reshuffle(&mut self) {
        self.order = self.items.clone();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_item(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_item()).collect()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Extra randomness tied to this stream (e.g. text choice on a pair).
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
