//! Line-delimited JSON pair files.
//!
//! One record per line:
//! `{"id": 0, "image": "<base64 RGB bytes>" | null, "side": 32, "texts": [{"text": "...", "alignment": "caption"}]}`

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{AlignedText, GroundedPair, Image};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: u64,
    #[serde(default)]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<usize>,
    texts: Vec<AlignedText>,
}

/// Reads a pair file; pair ids are reassigned in file order.
pub fn ingest_pairs(path: &Path) -> Result<Vec<GroundedPair>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_owned(), line: line_no, message };
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let image = match rec.image {
            None => None,
            Some(b64) => {
                let side = rec.side.ok_or_else(|| parse_err("image present without `side`".into()))?;
                let pixels = STANDARD.decode(b64.as_bytes()).map_err(|e| parse_err(format!("bad base64: {e}")))?;
                let image = Image { side, pixels };
                image
                    .validate()
                    .map_err(|e| Error::Validation(format!("{}:{line_no}: {e}", path.display())))?;
                Some(image)
            }
        };
        out.push(GroundedPair::new(out.len(), image, rec.texts));
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[GroundedPair]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        let rec = PairRecord {
            id: p.pair_id as u64,
            image: p.image.as_ref().map(|i| STANDARD.encode(&i.pixels)),
            side: p.image.as_ref().map(|i| i.side),
            texts: p.texts.clone(),
        };
        let line = serde_json::to_string(&rec).expect("pair record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, Alignment, WorldSpec};

    #[test]
    fn round_trip_generated_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let corpus = generate_corpus(&WorldSpec::new(3, 5).unwrap(), 3).unwrap();
        write_pairs(&path, &corpus).unwrap();
        let back = ingest_pairs(&path).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.iter().map(|p| p.pair_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(ingest_pairs(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_image_yields_text_only_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let pair = GroundedPair::new(
            0,
            None,
            vec![AlignedText { text: "the bako sits.".into(), alignment: Alignment::Lead }],
        );
        write_pairs(&path, &[pair.clone()]).unwrap();
        fs::write(&path, r#"{"id": 5, "texts": [{"text": "the bako sits.", "alignment": "lead"}]}"#).unwrap();
        let back = ingest_pairs(&path).unwrap();
        assert_eq!(back, vec![pair]);
    }

    #[test]
    fn malformed_record_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":0,\"texts\":[]}\n{not json}\n").unwrap();
        match ingest_pairs(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_square_image_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let b64 = STANDARD.encode(vec![0u8; 2 * 3 * 3]);
        fs::write(&path, format!("{{\"id\":0,\"image\":\"{b64}\",\"side\":2,\"texts\":[]}}\n")).unwrap();
        assert!(matches!(ingest_pairs(&path), Err(Error::Validation(_))));
    }
}
