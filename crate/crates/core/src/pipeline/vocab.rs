use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{tokenize, WorldSpec};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const CLS_TEXT: &str = "[CLS_T]";
pub const CLS_IMAGE: &str = "[CLS_I]";
pub const CLS_MM: &str = "[CLS_M]";

const SPECIALS: [&str; 5] = [PAD, MASK, CLS_TEXT, CLS_IMAGE, CLS_MM];

/// Dense token-to-id map. Ids 0..5 are the special tokens in the order
/// pad, mask, text cls, image cls, fusion cls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const MASK_ID: usize = 1;
    pub const CLS_TEXT_ID: usize = 2;
    pub const CLS_IMAGE_ID: usize = 3;
    pub const CLS_MM_ID: usize = 4;

    /// Specials followed by the sorted distinct tokens of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for t in texts {
            words.extend(tokenize(t));
        }
        Self::from_tokens(words)
    }

    /// Every token the world can generate: grammar, class names, templates.
    pub fn for_world(world: &WorldSpec) -> Self {
        let mut words: BTreeSet<String> = world.grammar.words().into_iter().collect();
        for a in &world.attributes {
            words.insert(a.name.clone());
            words.insert(a.plural.clone());
        }
        for t in &world.templates {
            words.extend(tokenize(&t.replace("{}", " ")));
        }
        words.insert(".".into());
        Self::from_tokens(words)
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab { tokens: Vec::new(), ids: HashMap::new() };
        for s in SPECIALS {
            v.push(s);
        }
        for w in words {
            if !v.ids.contains_key(&w) {
                v.push(&w);
            }
        }
        v
    }

    /// Appends a token if absent; returns its id.
    pub fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Token ids of `text` without any cls prefix.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        tokenize(text)
            .into_iter()
            .map(|t| self.id(&t).ok_or(Error::UnknownToken(t)))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("[?]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `token<TAB>id` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_tagged(path, "")
    }

    /// [`Vocab::save`] behind a `# config_hash <tag>` line when `tag` is nonempty.
    pub fn save_tagged(&self, path: &Path, tag: &str) -> Result<()> {
        let mut s = if tag.is_empty() { String::new() } else { format!("{}{tag}\n", super::TAG_PREFIX) };
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(&format!("{t}\t{i}\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_tagged(path)?.0)
    }

    /// Loads a vocabulary and the tag it was saved with, if any.
    pub fn load_tagged(path: &Path) -> Result<(Self, Option<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vocab { tokens: Vec::new(), ids: HashMap::new() };
        let mut tag = None;
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(t) = line.strip_prefix(super::TAG_PREFIX) {
                tag = Some(t.to_string());
                continue;
            }
            let parse = |message: String| Error::Parse { path: path.to_owned(), line: n + 1, message };
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| parse("expected token<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|_| parse(format!("bad id `{id}`")))?;
            if id != v.tokens.len() || v.ids.contains_key(tok) {
                return Err(parse(format!("ids must be dense and tokens unique (got {tok} -> {id})")));
            }
            v.push(tok);
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if v.token(i) != Some(*s) {
                return Err(Error::Validation(format!("vocabulary id {i} must be {s}")));
            }
        }
        Ok((v, tag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_distinct_and_first() {
        let v = Vocab::from_texts(["b a."]);
        assert_eq!(v.id(PAD), Some(Vocab::PAD_ID));
        assert_eq!(v.id(MASK), Some(Vocab::MASK_ID));
        assert_eq!(v.id(CLS_MM), Some(Vocab::CLS_MM_ID));
        assert_eq!(v.len(), 8);
        assert_eq!(v.token(5), Some("."));
    }

    #[test]
    fn encode_decode_round_trip() {
        let w = WorldSpec::new(5, 0).unwrap();
        let v = Vocab::for_world(&w);
        let text = format!("this {} sits near the {} .", w.class_name(0), w.attributes[1].plural);
        let ids = v.encode(&text).unwrap();
        assert_eq!(v.decode(&ids), text);
    }

    #[test]
    fn unknown_token_is_named() {
        let v = Vocab::from_texts(["a b"]);
        assert!(matches!(v.encode("a zz"), Err(Error::UnknownToken(t)) if t == "zz"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        let v = Vocab::for_world(&WorldSpec::new(3, 0).unwrap());
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        fs::write(&p, "[PAD]\t0\n[MASK]\t2\n").unwrap();
        assert!(matches!(Vocab::load(&p), Err(Error::Parse { line: 2, .. })));
    }
}
