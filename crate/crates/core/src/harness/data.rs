//! Pair TSV loading.

use std::path::Path;

use crate::lattice::CharSeq;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairExample {
    pub text_a: CharSeq,
    pub text_b: CharSeq,
    pub label: bool,
}

/// Parses `text_a<TAB>text_b<TAB>label` lines. Blank lines are skipped.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<PairExample>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, label] = fields[..] else {
            return Err(err(
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let label = match label.trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(i + 1, format!("label must be 0 or 1, found `{other}`"))),
        };
        let (text_a, text_b) = (CharSeq::new(a.trim()), CharSeq::new(b.trim()));
        if text_a.is_empty() || text_b.is_empty() {
            return Err(err(i + 1, "empty sentence".into()));
        }
        out.push(PairExample { text_a, text_b, label });
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

/// Unlabelled `text_a<TAB>text_b` lines; a trailing label column is ignored.
pub fn load_unlabelled(path: impl AsRef<Path>) -> Result<Vec<(CharSeq, CharSeq)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(a), Some(b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((CharSeq::new(a.trim()), CharSeq::new(b.trim())))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected two non-empty tab-separated sentences".into(),
                })
            }
        }
    }
    Ok(out)
}
