//! File-backed word → sense → sememe knowledge base with a sememe embedding table.
//!
//! KB file: UTF-8 TSV, one sense per line:
//! `word<TAB>sense_id<TAB>sememe1,sememe2,...`. Lines for the same word are
//! merged in file order.
//!
//! Embedding file: `sememe_id<TAB>v1 v2 ... v_dim`, space-separated decimals.
//! Without one, rows are drawn uniformly from `±1/√dim`, keyed by sememe id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::autodiff::{Initializer, Tensor};
use crate::{Error, Result};

/// Sememe embedding width used when no embedding file is given.
pub const DEFAULT_SEMEME_DIM: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KbError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("sememes without an embedding row: {}", ids.join(", "))]
    MissingEmbeddings { ids: Vec<String> },
    #[error("embedding for `{sememe}` has {found} values, expected {expected}")]
    DimMismatch {
        sememe: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sense {
    pub sense_id: String,
    /// Never empty.
    pub sememes: Vec<String>,
}

/// How to fill sememe embeddings when there is no embedding file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomEmbeddings {
    pub dim: usize,
    pub seed: u64,
}

impl Default for RandomEmbeddings {
    fn default() -> Self {
        Self {
            dim: DEFAULT_SEMEME_DIM,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, Vec<Sense>>,
    sememes: Vec<String>,
    sememe_index: HashMap<String, usize>,
    embeddings: Vec<Vec<f64>>,
    dim: usize,
}

impl KnowledgeBase {
    pub fn empty(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn load(kb_path: &Path, emb_path: Option<&Path>, random: RandomEmbeddings) -> Result<Self> {
        let kb = std::fs::read_to_string(kb_path).map_err(|e| Error::io(kb_path, e))?;
        let emb = emb_path
            .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .transpose()?;
        Ok(Self::parse(
            &kb,
            &kb_path.display().to_string(),
            emb.as_deref(),
            random,
        )?)
    }

    pub fn parse(
        kb_text: &str,
        source_name: &str,
        emb_text: Option<&str>,
        random: RandomEmbeddings,
    ) -> Result<Self, KbError> {
        let parse_err = |line: usize, message: String| KbError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut entries: BTreeMap<String, Vec<Sense>> = BTreeMap::new();
        for (i, raw) in kb_text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(
                    i + 1,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let word: String = fields[0].trim().nfc().collect();
            if word.is_empty() {
                return Err(parse_err(i + 1, "empty word".into()));
            }
            let sememes: Vec<String> = fields[2]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if sememes.is_empty() {
                return Err(parse_err(i + 1, format!("sense `{}` has no sememes", fields[1])));
            }
            entries.entry(word).or_default().push(Sense {
                sense_id: fields[1].trim().to_string(),
                sememes,
            });
        }

        let referenced: BTreeSet<&str> = entries
            .values()
            .flatten()
            .flat_map(|s| s.sememes.iter().map(String::as_str))
            .collect();
        let sememes: Vec<String> = referenced.iter().map(|s| s.to_string()).collect();

        let (embeddings, dim) = match emb_text {
            Some(text) => {
                let table = parse_embeddings(text, source_name)?;
                let dim = table.values().next().map_or(random.dim, Vec::len);
                let missing: Vec<String> = sememes.iter().filter(|s| !table.contains_key(*s)).cloned().collect();
                if !missing.is_empty() {
                    return Err(KbError::MissingEmbeddings { ids: missing });
                }
                let rows = sememes.iter().map(|s| table[s].clone()).collect();
                (rows, dim)
            }
            None => {
                let init = Initializer::new(random.seed);
                let bound = 1.0 / (random.dim as f64).sqrt();
                let rows = sememes
                    .iter()
                    .map(|s| {
                        let mut rng = init.rng_for(&format!("sememe:{s}"));
                        (0..random.dim).map(|_| rng.gen_range(-bound..=bound)).collect()
                    })
                    .collect();
                (rows, random.dim)
            }
        };
        let sememe_index = sememes.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            entries,
            sememes,
            sememe_index,
            embeddings,
            dim,
        })
    }

    /// Senses of `word` in file order; empty when the word is unknown.
    pub fn lookup(&self, word: &str) -> &[Sense] {
        self.entries.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn num_words(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sememe embedding width.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Referenced sememes in sorted order; row `i` of the embedding table is `sememes()[i]`.
    pub fn sememes(&self) -> &[String] {
        &self.sememes
    }

    pub fn sememe_index(&self, id: &str) -> Option<usize> {
        self.sememe_index.get(id).copied()
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.sememe_index(id).map(|i| self.embeddings[i].as_slice())
    }

    /// `[num_sememes, dim]` table, or `None` when no sememe is referenced.
    pub fn embedding_matrix(&self) -> Option<Tensor> {
        if self.sememes.is_empty() {
            return None;
        }
        let data = self.embeddings.iter().flatten().copied().collect();
        Some(Tensor::matrix(self.sememes.len(), self.dim, data).expect("rows share dim"))
    }

    pub fn write_kb(&self) -> String {
        let mut out = String::new();
        for (word, senses) in &self.entries {
            for s in senses {
                let _ = writeln!(out, "{word}\t{}\t{}", s.sense_id, s.sememes.join(","));
            }
        }
        out
    }

    pub fn write_embeddings(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.sememes.iter().zip(&self.embeddings) {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{id}\t{}", values.join(" "));
        }
        out
    }
}

fn parse_embeddings(text: &str, source_name: &str) -> Result<HashMap<String, Vec<f64>>, KbError> {
    let mut table = HashMap::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| KbError::Parse {
            source_name: format!("{source_name} (embeddings)"),
            line: i + 1,
            message: "expected `sememe<TAB>values`".into(),
        })?;
        let row: Vec<f64> = values
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KbError::Parse {
                source_name: format!("{source_name} (embeddings)"),
                line: i + 1,
                message: format!("bad number: {e}"),
            })?;
        let expected = *dim.get_or_insert(row.len());
        if row.len() != expected || row.is_empty() {
            return Err(KbError::DimMismatch {
                sememe: id.trim().to_string(),
                expected,
                found: row.len(),
            });
        }
        table.insert(id.trim().to_string(), row);
    }
    Ok(table)
}
