//! `key = value` run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::knowledge::DEFAULT_SEMEME_DIM;
use crate::lattice::Strategy;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// A segmentation strategy bound to a dictionary file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    pub strategy: Strategy,
    /// Falls back to `dict_path` when absent.
    pub dict: Option<PathBuf>,
}

impl SegmenterSpec {
    /// `strategy` or `strategy@path`.
    fn parse(item: &str, base: &Path) -> Result<Self> {
        let (name, dict) = match item.split_once('@') {
            Some((n, p)) => (n, Some(resolve(base, p.trim()))),
            None => (item, None),
        };
        Ok(Self {
            strategy: name.parse()?,
            dict,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "P")]
    pub perspectives: usize,
    pub dropout: f64,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_len: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub epochs: usize,
    pub patience: usize,
    pub encoder_lr_factor: f64,
    pub rho: f64,
    pub eps: f64,
    pub d_sem: usize,
    pub train_sememe_embeddings: bool,
    pub use_sense: bool,
    pub use_gru: bool,
    /// Keep only the k-th (0-based) segmenter.
    pub single_segmenter: Option<usize>,
    pub segmenters: Vec<SegmenterSpec>,
    pub dict_path: Option<PathBuf>,
    pub kb_path: Option<PathBuf>,
    pub sememe_emb_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d: m.dim,
            layers: m.layers,
            perspectives: m.perspectives,
            dropout: m.dropout,
            lr: 5e-4,
            warmup_ratio: 0.1,
            batch_size: 32,
            seed: 42,
            max_len: m.max_len,
            enc_layers: m.enc_layers,
            enc_heads: m.enc_heads,
            epochs: 10,
            patience: 5,
            encoder_lr_factor: 1.0,
            rho: 0.9,
            eps: 1e-8,
            d_sem: DEFAULT_SEMEME_DIM,
            train_sememe_embeddings: m.train_sememe_embeddings,
            use_sense: m.use_sense,
            use_gru: m.use_gru,
            single_segmenter: None,
            segmenters: vec![
                SegmenterSpec {
                    strategy: Strategy::Fmm,
                    dict: None,
                },
                SegmenterSpec {
                    strategy: Strategy::Bmm,
                    dict: None,
                },
            ],
            dict_path: None,
            kb_path: None,
            sememe_emb_path: None,
            train_path: None,
            dev_path: None,
            vocab_path: None,
            out_dir: None,
        }
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn is_none(value: &str) -> bool {
    value.is_empty() || value.eq_ignore_ascii_case("none")
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            config
                .set(key.trim(), value.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S], base: &Path) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not `key=value`")))?;
            self.set(key.trim(), value.trim(), base)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| (!is_none(v)).then(|| resolve(base, v));
        match key {
            "d" | "dim" => self.d = parse_num(key, value)?,
            "L" | "layers" => self.layers = parse_num(key, value)?,
            "P" | "perspectives" => self.perspectives = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "warmup_ratio" => self.warmup_ratio = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "enc_layers" => self.enc_layers = parse_num(key, value)?,
            "enc_heads" => self.enc_heads = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "encoder_lr_factor" => self.encoder_lr_factor = parse_num(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "eps" => self.eps = parse_num(key, value)?,
            "d_sem" => self.d_sem = parse_num(key, value)?,
            "train_sememe_embeddings" => self.train_sememe_embeddings = parse_bool(key, value)?,
            "use_sense" => self.use_sense = parse_bool(key, value)?,
            "use_gru" => self.use_gru = parse_bool(key, value)?,
            "single_segmenter" => {
                self.single_segmenter = if is_none(value) {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "segmenters" => {
                self.segmenters = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| SegmenterSpec::parse(s, base))
                    .collect::<Result<_>>()?
            }
            "dict_path" => self.dict_path = path(value),
            "kb_path" => self.kb_path = path(value),
            "sememe_emb_path" => self.sememe_emb_path = path(value),
            "train_path" => self.train_path = path(value),
            "dev_path" => self.dev_path = path(value),
            "vocab_path" => self.vocab_path = path(value),
            "out_dir" => self.out_dir = path(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 || self.lr < 0.0 || self.encoder_lr_factor < 0.0 {
            return bad("optimizer settings out of range".into());
        }
        if self.segmenters.is_empty() {
            return bad("at least one segmenter is required".into());
        }
        if let Some(k) = self.single_segmenter {
            if k >= self.segmenters.len() {
                return bad(format!(
                    "single_segmenter {k} out of range for {} segmenters",
                    self.segmenters.len()
                ));
            }
        }
        if self.d_sem == 0 {
            return bad("d_sem must be positive".into());
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dim: self.d,
            layers: self.layers,
            perspectives: self.perspectives,
            dropout: self.dropout,
            enc_layers: self.enc_layers,
            enc_heads: self.enc_heads,
            max_len: self.max_len,
            use_sense: self.use_sense,
            use_gru: self.use_gru,
            train_sememe_embeddings: self.train_sememe_embeddings,
        }
    }

    /// Segmenters in effect after `single_segmenter`, each with its dictionary path.
    pub fn active_segmenters(&self) -> Result<Vec<(Strategy, PathBuf)>> {
        let chosen: Vec<&SegmenterSpec> = match self.single_segmenter {
            Some(k) => vec![self
                .segmenters
                .get(k)
                .ok_or_else(|| Error::Config(format!("single_segmenter {k} out of range")))?],
            None => self.segmenters.iter().collect(),
        };
        chosen
            .into_iter()
            .map(|s| {
                let dict = s.dict.clone().or_else(|| self.dict_path.clone()).ok_or_else(|| {
                    Error::Config(format!(
                        "segmenter `{}` has no dictionary and dict_path is unset",
                        s.strategy
                    ))
                })?;
                Ok((s.strategy, dict))
            })
            .collect()
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{name}` is not set")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.layers, c.perspectives, c.d), (2, 20, 128));
        assert_eq!((c.dropout, c.lr, c.warmup_ratio), (0.2, 5e-4, 0.1));
        assert_eq!(c.batch_size, 32);
        assert_eq!((c.rho, c.eps, c.encoder_lr_factor, c.patience), (0.9, 1e-8, 1.0, 5));
    }

    #[test]
    fn parses_keys_comments_and_relative_paths() {
        let text = "# toy\nd = 16\nL=1\nP = 4\nuse_gru = false\nsegmenters = fmm@a.txt, shortest\ndict_path = words.txt\nkb_path = none\n";
        let c = RunConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!((c.d, c.layers, c.perspectives, c.use_gru), (16, 1, 4, false));
        assert_eq!(c.kb_path, None);
        let segs = c.active_segmenters().unwrap();
        assert_eq!(
            segs,
            vec![
                (Strategy::Fmm, PathBuf::from("/data/a.txt")),
                (Strategy::Shortest, PathBuf::from("/data/words.txt")),
            ]
        );
    }

    #[test]
    fn overrides_and_single_segmenter() {
        let mut c = RunConfig::parse("segmenters = fmm@x, bmm@y\n", Path::new("base")).unwrap();
        c.apply_overrides(&["single_segmenter=1", "lr = 0.01"], Path::new("."))
            .unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(
            c.active_segmenters().unwrap(),
            vec![(Strategy::Bmm, PathBuf::from("base/y"))]
        );
        assert!(c.apply_overrides(&["single_segmenter=2"], Path::new(".")).is_err());
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("d = 8\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::parse("P = 0\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("dropout = 1.5\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("d\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_dictionary_is_reported() {
        let c = RunConfig::default();
        assert!(c.active_segmenters().is_err());
    }

    #[test]
    fn serializes_with_paper_symbols() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        assert_eq!(v["L"], 2);
        assert_eq!(v["P"], 20);
        assert_eq!(v["d"], 128);
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
