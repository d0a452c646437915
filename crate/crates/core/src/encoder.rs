//! Character-level transformer encoder over a packed sentence pair.
//!
//! Input layout is `[CLS] a_1 … a_n [SEP] b_1 … b_m [SEP]`. Each slot gets a
//! character, absolute position and segment embedding, summed and
//! layer-normalized, followed by post-norm transformer layers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Axis, Graph, Initializer, ParamId, ParamStore, Tensor, Var};
use crate::lattice::CharSeq;
use crate::nn::{residual_norm, FeedForward, LayerNormParams, Linear};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Character vocabulary. Ids 0..4 are the reserved markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    ids: BTreeMap<char, usize>,
}

impl Default for CharVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl CharVocab {
    /// Reserved markers only.
    pub fn new() -> Self {
        Self { ids: BTreeMap::new() }
    }

    /// Every distinct character in `texts`, ids assigned in code-point order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a CharSeq>) -> Self {
        let mut chars: Vec<char> = texts.into_iter().flat_map(|t| t.chars().iter().copied()).collect();
        chars.sort_unstable();
        chars.dedup();
        let ids = chars
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, i + RESERVED.len()))
            .collect();
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len() + RESERVED.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    /// `char<TAB>id` lines, reserved rows first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, name) in RESERVED.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{i}");
        }
        let mut rows: Vec<_> = self.ids.iter().collect();
        rows.sort_by_key(|(_, id)| **id);
        for (c, id) in rows {
            let _ = writeln!(out, "{c}\t{id}");
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut ids = BTreeMap::new();
        let mut seen = vec![false; RESERVED.len()];
        let mut next = RESERVED.len();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (key, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| err(i + 1, "expected `char<TAB>id`".into()))?;
            let id: usize = id.trim().parse().map_err(|_| err(i + 1, format!("bad id `{id}`")))?;
            if let Some(r) = RESERVED.iter().position(|r| *r == key) {
                if r != id {
                    return Err(err(i + 1, format!("{key} must have id {r}")));
                }
                seen[r] = true;
                continue;
            }
            let mut chars = key.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(err(i + 1, format!("`{key}` is not a single character")));
            };
            if id != next {
                return Err(err(i + 1, format!("expected id {next}, found {id}")));
            }
            if ids.insert(c, id).is_some() {
                return Err(err(i + 1, format!("duplicate character `{c}`")));
            }
            next += 1;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(err(0, format!("missing reserved row {}", RESERVED[missing])));
        }
        Ok(Self { ids })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    attn_norm: LayerNormParams,
    ffn: FeedForward,
    ffn_norm: LayerNormParams,
}

/// Encoder parameters. All paths live under `encoder.`.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    char_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    emb_norm: LayerNormParams,
    layers: Vec<EncoderLayer>,
}

/// Contextual representations of one packed pair.
#[derive(Clone, Debug)]
pub struct EncodedPair {
    /// `[1, d]`
    pub cls: Var,
    /// `[T_a, d]`
    pub reps_a: Var,
    /// `[T_b, d]`
    pub reps_b: Var,
    /// Attention probabilities per layer and head, each `[n, n]` over all slots.
    pub attention: Vec<Vec<Var>>,
}

pub const PARAM_PREFIX: &str = "encoder.";

impl Encoder {
    pub fn new(store: &mut ParamStore, init: &Initializer, vocab_size: usize, config: EncoderConfig) -> Result<Self> {
        if config.heads == 0 || !config.dim.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "encoder heads ({}) must divide d ({})",
                config.heads, config.dim
            )));
        }
        if config.max_len < 5 {
            return Err(Error::Config("max_len must be at least 5".into()));
        }
        let d = config.dim;
        let emb = |store: &mut ParamStore, name: &str, rows: usize| -> Result<ParamId> {
            let path = format!("encoder.{name}");
            let bound = 1.0 / (d as f64).sqrt();
            Ok(store.insert(path.clone(), init.uniform(&path, rows, d, bound))?)
        };
        let char_emb = emb(store, "char_emb", vocab_size)?;
        let pos_emb = emb(store, "pos_emb", config.max_len)?;
        let seg_emb = emb(store, "seg_emb", 2)?;
        let emb_norm = LayerNormParams::new(store, init, "encoder.emb_norm", d)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.layer{l}");
            layers.push(EncoderLayer {
                query: Linear::new(store, init, &format!("{p}.query"), d, d)?,
                key: Linear::new(store, init, &format!("{p}.key"), d, d)?,
                value: Linear::new(store, init, &format!("{p}.value"), d, d)?,
                output: Linear::new(store, init, &format!("{p}.output"), d, d)?,
                attn_norm: LayerNormParams::new(store, init, &format!("{p}.attn_norm"), d)?,
                ffn: FeedForward::new(store, init, &format!("{p}.ffn"), d, 4 * d, d)?,
                ffn_norm: LayerNormParams::new(store, init, &format!("{p}.ffn_norm"), d)?,
            });
        }
        Ok(Self {
            config,
            char_emb,
            pos_emb,
            seg_emb,
            emb_norm,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Token ids and segment ids of the packed pair.
    pub fn pack(&self, vocab: &CharVocab, a: &CharSeq, b: &CharSeq) -> Result<(Vec<usize>, Vec<usize>)> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptySentence);
        }
        if a.len() + b.len() + 3 > self.config.max_len {
            return Err(Error::Overlength {
                len_a: a.len(),
                len_b: b.len(),
                max_len: self.config.max_len,
            });
        }
        let mut ids = vec![CLS];
        ids.extend(a.chars().iter().map(|&c| vocab.id(c)));
        ids.push(SEP);
        let first = ids.len();
        ids.extend(b.chars().iter().map(|&c| vocab.id(c)));
        ids.push(SEP);
        let segs = (0..ids.len()).map(|i| usize::from(i >= first)).collect();
        Ok((ids, segs))
    }

    pub fn encode_pair(&self, g: &mut Graph<'_>, vocab: &CharVocab, a: &CharSeq, b: &CharSeq) -> Result<EncodedPair> {
        let (ids, segs) = self.pack(vocab, a, b)?;
        let (hidden, attention) = self.encode_ids(g, &ids, &segs, ids.len())?;
        Ok(EncodedPair {
            cls: g.slice(hidden, Axis::Rows, 0, 1)?,
            reps_a: g.slice(hidden, Axis::Rows, 1, a.len())?,
            reps_b: g.slice(hidden, Axis::Rows, a.len() + 2, b.len())?,
            attention,
        })
    }

    /// Runs the stack over `ids` padded with `[PAD]` up to `padded_len`.
    /// Padded keys are masked out; returns `[padded_len, d]` and the attention maps.
    pub fn encode_ids(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        segs: &[usize],
        padded_len: usize,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let n = ids.len();
        if n == 0 || segs.len() != n || padded_len < n || padded_len > self.config.max_len {
            return Err(Error::Config(format!(
                "encoder input of {n} tokens cannot be padded to {padded_len} (max_len {})",
                self.config.max_len
            )));
        }
        let mut tokens = ids.to_vec();
        tokens.resize(padded_len, PAD);
        let mut segments = segs.to_vec();
        segments.resize(padded_len, 0);
        let positions: Vec<usize> = (0..padded_len).collect();

        let char_emb = g.param(self.char_emb)?;
        let pos_emb = g.param(self.pos_emb)?;
        let seg_emb = g.param(self.seg_emb)?;
        let c = g.gather_rows(char_emb, &tokens)?;
        let p = g.gather_rows(pos_emb, &positions)?;
        let s = g.gather_rows(seg_emb, &segments)?;
        let x = g.add(c, p)?;
        let x = g.add(x, s)?;
        let x = self.emb_norm.forward(g, x)?;
        let mut x = g.dropout(x, self.config.dropout)?;

        let mask = if padded_len > n {
            let mut m = vec![0.0; padded_len * padded_len];
            for row in m.chunks_mut(padded_len) {
                row[n..].fill(f64::NEG_INFINITY);
            }
            Some(g.constant(Tensor::matrix(padded_len, padded_len, m)?)?)
        } else {
            None
        };

        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, probs) = self.layer_forward(g, layer, x, mask)?;
            x = y;
            attention.push(probs);
        }
        Ok((x, attention))
    }

    fn layer_forward(
        &self,
        g: &mut Graph<'_>,
        layer: &EncoderLayer,
        x: Var,
        mask: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        let heads = self.config.heads;
        let dh = self.config.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = layer.query.forward(g, x)?;
        let k = layer.key.forward(g, x)?;
        let v = layer.value.forward(g, x)?;
        let mut outs = Vec::with_capacity(heads);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice(q, Axis::Cols, h * dh, dh)?;
            let kh = g.slice(k, Axis::Cols, h * dh, dh)?;
            let vh = g.slice(v, Axis::Cols, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let a = g.softmax(scores, Axis::Cols);
            probs.push(a);
            outs.push(g.matmul(a, vh)?);
        }
        let heads_out = g.concat(&outs, Axis::Cols)?;
        let attn = layer.output.forward(g, heads_out)?;
        let attn = g.dropout(attn, self.config.dropout)?;
        let x = residual_norm(g, x, attn, &layer.attn_norm)?;
        let f = layer.ffn.forward(g, x, self.config.dropout)?;
        let f = g.dropout(f, self.config.dropout)?;
        let x = residual_norm(g, x, f, &layer.ffn_norm)?;
        Ok((x, probs))
    }
}
