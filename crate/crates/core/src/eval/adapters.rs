//! Tab-separated adapter formats so external benchmark data can be scored.
//!
//! Minimal pairs: `grammatical<TAB>ungrammatical<TAB>phenomenon`.
//! Classification: `label<TAB>text`.
//! Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use crate::corpus::{LabeledSentence, MinimalPair};
use crate::error::{Error, Result};

fn records(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(str::to_string).collect();
        if parts.len() != fields {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                message: format!("expected {fields} tab-separated fields, found {}", parts.len()),
            });
        }
        out.push((idx + 1, parts));
    }
    Ok(out)
}

pub fn read_minimal_pairs(path: &Path) -> Result<Vec<MinimalPair>> {
    Ok(records(path, 3)?
        .into_iter()
        .map(|(_, mut f)| MinimalPair {
            phenomenon: f.pop().expect("three fields"),
            ungrammatical: f.pop().expect("three fields"),
            grammatical: f.pop().expect("three fields"),
        })
        .collect())
}

pub fn write_minimal_pairs(path: &Path, pairs: &[MinimalPair]) -> Result<()> {
    let mut text = String::new();
    for p in pairs {
        text.push_str(&format!("{}\t{}\t{}\n", p.grammatical, p.ungrammatical, p.phenomenon));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledSentence>> {
    records(path, 2)?
        .into_iter()
        .map(|(line, f)| {
            let label = f[0].trim().parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line,
                message: format!("label `{}` is not a non-negative integer", f[0]),
            })?;
            Ok(LabeledSentence { text: f[1].clone(), label })
        })
        .collect()
}

pub fn write_labeled(path: &Path, data: &[LabeledSentence]) -> Result<()> {
    let mut text = String::new();
    for s in data {
        text.push_str(&format!("{}\t{}\n", s.label, s.text));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
