//! Dictionary-driven segmenters. Every single character is implicitly in
//! vocabulary, so each strategy always returns a full tiling of the text.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{CharSeq, WordNode};
use crate::{Error, Result};

/// A word list. Lookups are by exact (NFC-normalized) surface.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    words: HashSet<String>,
    max_chars: usize,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str) {
        let word = CharSeq::new(word.trim());
        if word.is_empty() {
            return;
        }
        self.max_chars = self.max_chars.max(word.len());
        self.words.insert(word.to_string());
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Length in characters of the longest entry.
    pub fn max_chars(&self) -> usize {
        self.max_chars
    }

    /// Parses one word per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Self {
        let mut dict = Self::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            dict.insert(line);
        }
        dict
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }
}

impl<S: AsRef<str>> FromIterator<S> for Dictionary {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut dict = Self::new();
        for w in iter {
            dict.insert(w.as_ref());
        }
        dict
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Greedy longest match scanning left to right.
    Fmm,
    /// Greedy longest match scanning right to left.
    Bmm,
    /// Fewest words overall; ties prefer the longer word at each position.
    Shortest,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fmm => "fmm",
            Strategy::Bmm => "bmm",
            Strategy::Shortest => "shortest",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fmm" | "forward" | "forward-max-match" => Ok(Strategy::Fmm),
            "bmm" | "backward" | "backward-max-match" => Ok(Strategy::Bmm),
            "shortest" | "shortest-path" | "sp" => Ok(Strategy::Shortest),
            other => Err(Error::Config(format!("unknown segmentation strategy `{other}`"))),
        }
    }
}

/// Segments `text` into one path of word nodes tiling `[1, T]`.
pub fn segment(text: &CharSeq, dict: &Dictionary, strategy: Strategy) -> Vec<WordNode> {
    let t = text.len();
    let known = |from: usize, to: usize| -> bool { to - from == 1 || dict.contains(&text.substring(from, to)) };
    let longest = dict.max_chars().max(1);
    // Half-open 0-based spans.
    let mut spans: Vec<(usize, usize)> = Vec::new();
    match strategy {
        Strategy::Fmm => {
            let mut i = 0;
            while i < t {
                let len = (1..=longest.min(t - i))
                    .rev()
                    .find(|&len| known(i, i + len))
                    .unwrap_or(1);
                spans.push((i, i + len));
                i += len;
            }
        }
        Strategy::Bmm => {
            let mut j = t;
            while j > 0 {
                let len = (1..=longest.min(j)).rev().find(|&len| known(j - len, j)).unwrap_or(1);
                spans.push((j - len, j));
                j -= len;
            }
            spans.reverse();
        }
        Strategy::Shortest => {
            // cost[i] = fewest words tiling text[i..]; choice[i] = first word length.
            let mut cost = vec![usize::MAX; t + 1];
            let mut choice = vec![1; t + 1];
            cost[t] = 0;
            for i in (0..t).rev() {
                for len in (1..=longest.min(t - i)).rev() {
                    if known(i, i + len) && cost[i + len] + 1 < cost[i] {
                        cost[i] = cost[i + len] + 1;
                        choice[i] = len;
                    }
                }
            }
            let mut i = 0;
            while i < t {
                spans.push((i, i + choice[i]));
                i += choice[i];
            }
        }
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(id, (s, e))| WordNode::new(id, text, s + 1, e))
        .collect()
}
