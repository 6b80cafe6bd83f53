//! The synthetic world: object classes, how they look, what they are called,
//! and the grammar used to talk about them.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const LEVELS: [u8; 5] = [40, 90, 140, 190, 240];
const SHAPES: usize = 8;
const COLORS: usize = 125;
const SIZES: usize = 2;

/// Largest number of classes that still render pairwise distinct.
pub const MAX_CLASSES: usize = SHAPES * COLORS * SIZES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Disk,
    Triangle,
    Cross,
    Ring,
    HBar,
    VBar,
    Diamond,
}

impl Shape {
    fn from_index(i: usize) -> Self {
        use Shape::*;
        [Square, Disk, Triangle, Cross, Ring, HBar, VBar, Diamond][i % SHAPES]
    }

    /// Whether offset `(x, y)` from the shape centre is inside a shape of
    /// half-extent `r`.
    fn covers(self, x: i32, y: i32, r: i32) -> bool {
        let (ax, ay) = (x.abs(), y.abs());
        match self {
            Shape::Square => ax <= r && ay <= r,
            Shape::Disk => x * x + y * y <= r * r,
            Shape::Triangle => y >= -r && y <= r && 2 * ax <= y + r,
            Shape::Cross => (ax <= r / 3 && ay <= r) || (ay <= r / 3 && ax <= r),
            Shape::Ring => {
                let d = x * x + y * y;
                d <= r * r && d >= (r / 2) * (r / 2)
            }
            Shape::HBar => ax <= r && ay <= r / 3,
            Shape::VBar => ay <= r && ax <= r / 3,
            Shape::Diamond => ax + ay <= r,
        }
    }
}

/// Appearance of one object class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAttributes {
    pub name: String,
    pub plural: String,
    pub color: [u8; 3],
    pub shape: Shape,
    pub large: bool,
}

/// Singular/plural forms of a word that agrees in number.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberPair {
    pub singular: String,
    pub plural: String,
}

impl NumberPair {
    pub fn new(singular: &str, plural: &str) -> Self {
        Self { singular: singular.to_owned(), plural: plural.to_owned() }
    }

    pub fn form(&self, plural: bool) -> &str {
        if plural {
            &self.plural
        } else {
            &self.singular
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub forms: NumberPair,
    /// Motion verbs form the linguistic feature of the generalization probe.
    pub motion: bool,
}

/// Word lists behind the sentence frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    /// Number-marked determiners (`this`/`these`).
    pub determiners: Vec<NumberPair>,
    /// Determiners compatible with either number.
    pub neutral_determiners: Vec<String>,
    pub intransitive: Vec<Verb>,
    pub transitive: Vec<NumberPair>,
    pub anaphor: NumberPair,
    pub prepositions: Vec<String>,
    pub relativizer: String,
    /// Probe surface cue: its presence in a sentence...
    pub cue_word: String,
    /// ...versus this determiner in the same slots.
    pub non_cue_word: String,
}

impl Default for Grammar {
    fn default() -> Self {
        let iv = |s: &str, p: &str, motion| Verb { forms: NumberPair::new(s, p), motion };
        Self {
            determiners: vec![NumberPair::new("this", "these"), NumberPair::new("that", "those")],
            neutral_determiners: vec!["the".into()],
            intransitive: vec![
                iv("sits", "sit", false),
                iv("sleeps", "sleep", false),
                iv("waits", "wait", false),
                iv("rests", "rest", false),
                iv("runs", "run", true),
                iv("jumps", "jump", true),
                iv("swims", "swim", true),
                iv("flies", "fly", true),
            ],
            transitive: vec![
                NumberPair::new("sees", "see"),
                NumberPair::new("likes", "like"),
                NumberPair::new("follows", "follow"),
                NumberPair::new("finds", "find"),
                NumberPair::new("watches", "watch"),
            ],
            anaphor: NumberPair::new("itself", "themselves"),
            prepositions: vec!["near".into(), "behind".into(), "above".into(), "under".into()],
            relativizer: "which".into(),
            cue_word: "the".into(),
            non_cue_word: "a".into(),
        }
    }
}

impl Grammar {
    pub fn validate(&self) -> Result<()> {
        if self.determiners.is_empty() {
            return Err(Error::Config("grammar has no number-marked determiners".into()));
        }
        if self.intransitive.is_empty() || self.transitive.is_empty() {
            return Err(Error::Config("grammar needs intransitive and transitive verbs".into()));
        }
        if self.prepositions.is_empty() {
            return Err(Error::Config("grammar has no prepositions".into()));
        }
        Ok(())
    }

    /// Every word the grammar can emit, excluding nouns.
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.determiners {
            out.push(d.singular.clone());
            out.push(d.plural.clone());
        }
        out.extend(self.neutral_determiners.iter().cloned());
        for v in &self.intransitive {
            out.push(v.forms.singular.clone());
            out.push(v.forms.plural.clone());
        }
        for v in &self.transitive {
            out.push(v.singular.clone());
            out.push(v.plural.clone());
        }
        out.push(self.anaphor.singular.clone());
        out.push(self.anaphor.plural.clone());
        out.extend(self.prepositions.iter().cloned());
        out.push(self.relativizer.clone());
        out.push(self.cue_word.clone());
        out.push(self.non_cue_word.clone());
        out
    }

    /// Determiners usable with a noun of the given number.
    pub fn determiners_for(&self, plural: bool) -> Vec<&str> {
        let mut out: Vec<&str> = self.neutral_determiners.iter().map(String::as_str).collect();
        out.extend(self.determiners.iter().map(|d| d.form(plural)));
        out
    }
}

/// Everything needed to regenerate a corpus bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_classes: usize,
    pub attributes: Vec<ClassAttributes>,
    /// Caption templates; `{}` marks the class-name slot.
    pub templates: Vec<String>,
    pub grammar: Grammar,
    pub seed: u64,
    pub image_side: usize,
    /// Maximum shape displacement in pixels, drawn per image.
    pub jitter: usize,
}

pub const DEFAULT_TEMPLATES: &[&str] = &[
    "a photo of a {}.",
    "a picture of the {}.",
    "a drawing of a {}.",
    "an image of a {}.",
    "this is a {}.",
    "the {} in the picture.",
    "a small photo of the {}.",
    "a rendering of a {}.",
];

impl WorldSpec {
    /// A world with default grammar, templates and 32-pixel images.
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("world needs at least one class".into()));
        }
        if num_classes > MAX_CLASSES {
            return Err(Error::Config(format!("at most {MAX_CLASSES} classes render distinctly")));
        }
        let grammar = Grammar::default();
        let templates: Vec<String> = DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect();
        let mut reserved: HashSet<String> = grammar.words().into_iter().collect();
        for t in &templates {
            reserved.extend(super::tokenize(&t.replace("{}", "")));
        }
        let attributes = class_attributes(num_classes, &reserved);
        Ok(Self { num_classes, attributes, templates, grammar, seed, image_side: 32, jitter: 2 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.attributes.len() != self.num_classes {
            return Err(Error::Config("world has no classes or mismatched attributes".into()));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("world has no caption templates".into()));
        }
        if let Some(t) = self.templates.iter().find(|t| t.matches("{}").count() != 1) {
            return Err(Error::Config(format!("template `{t}` must contain exactly one slot")));
        }
        if self.image_side == 0 {
            return Err(Error::Config("image side must be positive".into()));
        }
        self.grammar.validate()
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.attributes[class].name
    }

    pub fn class_of_word(&self, word: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == word || a.plural == word)
    }

    /// Renders `class` with its shape displaced by `(dx, dy)`.
    pub fn render(&self, class: usize, dx: i32, dy: i32) -> Image {
        let attr = &self.attributes[class];
        let side = self.image_side as i32;
        let r = if attr.large { side * 3 / 8 } else { side / 4 };
        let (cx, cy) = (side / 2 + dx, side / 2 + dy);
        let mut pixels = vec![0u8; (side * side * 3) as usize];
        for y in 0..side {
            for x in 0..side {
                if attr.shape.covers(x - cx, y - cy, r) {
                    let o = ((y * side + x) * 3) as usize;
                    pixels[o..o + 3].copy_from_slice(&attr.color);
                }
            }
        }
        Image { side: self.image_side, pixels }
    }

    pub fn render_jittered<R: Rng>(&self, class: usize, rng: &mut R) -> Image {
        let j = self.jitter as i32;
        let dx = rng.random_range(-j..=j);
        let dy = rng.random_range(-j..=j);
        self.render(class, dx, dy)
    }

    /// Recovers the class of a rendered image by exact template matching over
    /// every class and jitter offset.
    pub fn identify(&self, image: &Image) -> Option<usize> {
        let j = self.jitter as i32;
        (0..self.num_classes).find(|&c| {
            (-j..=j).any(|dx| (-j..=j).any(|dy| self.render(c, dx, dy).pixels == image.pixels))
        })
    }
}

fn class_attributes(n: usize, reserved: &HashSet<String>) -> Vec<ClassAttributes> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let ns = syllables.len();
    let mut names = Vec::with_capacity(n);
    let mut k = 0usize;
    while names.len() < n {
        let a = k % ns;
        let b = (k / ns + 13 * k) % ns;
        k += 1;
        let name = format!("{}{}", syllables[a], syllables[b]);
        let plural = format!("{name}s");
        if reserved.contains(&name) || reserved.contains(&plural) {
            continue;
        }
        names.push(name);
    }
    names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            // c -> (c mod 8, c mod 125) is injective below 1000 because 8 and
            // 125 are coprime; the multiplier spreads neighbouring classes
            // across the palette.
            let color_idx = ((c % COLORS) * 37) % COLORS;
            let color = [LEVELS[color_idx / 25], LEVELS[(color_idx / 5) % 5], LEVELS[color_idx % 5]];
            ClassAttributes {
                plural: format!("{name}s"),
                name,
                color,
                shape: Shape::from_index(c % SHAPES),
                large: (c / (SHAPES * COLORS)) % SIZES == 1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_avoid_grammar_words() {
        let w = WorldSpec::new(MAX_CLASSES, 0).unwrap();
        let reserved: HashSet<String> = w.grammar.words().into_iter().collect();
        let mut seen = HashSet::new();
        for a in &w.attributes {
            assert!(seen.insert(a.name.clone()));
            assert!(seen.insert(a.plural.clone()));
            assert!(!reserved.contains(&a.name));
        }
    }

    #[test]
    fn every_class_renders_distinctly() {
        let w = WorldSpec::new(MAX_CLASSES, 0).unwrap();
        let mut seen = HashSet::new();
        for c in 0..w.num_classes {
            assert!(seen.insert(w.render(c, 0, 0).pixels), "class {c} collides");
        }
    }

    #[test]
    fn identify_inverts_render() {
        let w = WorldSpec::new(12, 0).unwrap();
        for c in 0..12 {
            assert_eq!(w.identify(&w.render(c, 1, -2)), Some(c));
        }
    }

    #[test]
    fn rejects_zero_classes_and_empty_templates() {
        assert!(WorldSpec::new(0, 1).is_err());
        let mut w = WorldSpec::new(3, 1).unwrap();
        w.templates.clear();
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }
}
