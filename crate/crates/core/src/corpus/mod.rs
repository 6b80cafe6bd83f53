//! Grounded image/text corpora: synthetic generation, external ingestion and
//! the evaluation probes derived from the same world.

mod generate;
mod io;
mod minimal_pairs;
mod probe;
mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use generate::{generate_corpus, SentenceGenerator};
pub use io::{ingest_pairs, write_pairs};
pub use minimal_pairs::{count_derivations, enumerate_derivations, generate_minimal_pairs, MinimalPair, Phenomenon};
pub use probe::{generate_generalization_probe, LabeledSentence, ProbeSplit};
pub use world::{ClassAttributes, Grammar, NumberPair, Shape, Verb, WorldSpec, DEFAULT_TEMPLATES, MAX_CLASSES};

use crate::error::{Error, Result};

/// Square RGB raster, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub side: usize,
    pub pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.side, self.side)
    }
}

impl Image {
    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.pixels.len() != self.side * self.side * 3 {
            return Err(Error::Validation(format!(
                "image is not square: {} bytes for side {}",
                self.pixels.len(),
                self.side
            )));
        }
        Ok(())
    }

    pub fn validate_patches(&self, patch_side: usize) -> Result<()> {
        self.validate()?;
        if patch_side == 0 || self.side % patch_side != 0 {
            return Err(Error::Validation(format!(
                "image side {} is not divisible by patch side {patch_side}",
                self.side
            )));
        }
        Ok(())
    }

    /// Splits into `patch_side`-square patches in raster order, each flattened
    /// row-major with channels innermost and scaled to [0, 1].
    pub fn patches(&self, patch_side: usize) -> Vec<Vec<f64>> {
        let per_row = self.side / patch_side;
        let mut out = Vec::with_capacity(per_row * per_row);
        for py in 0..per_row {
            for px in 0..per_row {
                let mut patch = Vec::with_capacity(patch_side * patch_side * 3);
                for y in 0..patch_side {
                    let row = py * patch_side + y;
                    let start = (row * self.side + px * patch_side) * 3;
                    patch.extend(self.pixels[start..start + patch_side * 3].iter().map(|&b| b as f64 / 255.0));
                }
                out.push(patch);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Short strongly aligned strings (alt text and captions).
    Caption,
    /// Text from the article section holding the image.
    Section,
    /// Text from the article lead.
    Lead,
}

impl Alignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::Caption => "caption",
            Alignment::Section => "section",
            Alignment::Lead => "lead",
        }
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(Alignment::Caption),
            "section" => Ok(Alignment::Section),
            "lead" => Ok(Alignment::Lead),
            other => Err(Error::Validation(format!("unknown alignment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedText {
    pub text: String,
    pub alignment: Alignment,
}

/// One image with its aligned texts; the corpus atom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundedPair {
    /// Position in canonical corpus order.
    pub pair_id: usize,
    /// Absent for text-only records of ingested corpora.
    pub image: Option<Image>,
    pub texts: Vec<AlignedText>,
    pub word_count: usize,
}

impl GroundedPair {
    pub fn new(pair_id: usize, image: Option<Image>, texts: Vec<AlignedText>) -> Self {
        let word_count = texts.iter().map(|t| count_words(&t.text)).sum();
        Self { pair_id, image, texts, word_count }
    }
}

/// Whitespace word count.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Whitespace split with sentence punctuation as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if matches!(ch, '.' | ',' | '!' | '?' | ';' | ':') {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Splits a paragraph into sentences, keeping the terminal punctuation.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for tok in text.split_whitespace() {
        cur.push(tok);
        if tok.ends_with(['.', '!', '?']) {
            out.push(cur.join(" "));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("this bako sits."), vec!["this", "bako", "sits", "."]);
        assert_eq!(tokenize("  a, b  "), vec!["a", ",", "b"]);
    }

    #[test]
    fn word_count_is_whitespace_based() {
        let p = GroundedPair::new(
            0,
            None,
            vec![
                AlignedText { text: "a photo of a bako.".into(), alignment: Alignment::Caption },
                AlignedText { text: "the bako sits.".into(), alignment: Alignment::Section },
            ],
        );
        assert_eq!(p.word_count, 8);
    }

    #[test]
    fn patches_are_raster_ordered() {
        let mut pixels = vec![0u8; 4 * 4 * 3];
        // top-right pixel of the top-right 2x2 patch
        pixels[(0 * 4 + 3) * 3] = 255;
        let img = Image { side: 4, pixels };
        let p = img.patches(2);
        assert_eq!(p.len(), 4);
        assert_eq!(p[1][3], 1.0);
        assert!(p[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_sentences_keeps_punctuation() {
        assert_eq!(split_sentences("a b. c d. e"), vec!["a b.", "c d.", "e"]);
    }
}
