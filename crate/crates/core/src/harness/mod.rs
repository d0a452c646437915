//! Configuration, data loading, training, evaluation and checkpoints.

pub mod checkpoint;
mod config;
mod data;
mod optim;

pub use config::{RunConfig, SegmenterSpec};
pub use data::{load_pairs, load_unlabelled, parse_pairs, PairExample};
pub use optim::{lr_schedule, RmsProp};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient_check, GradCheckReport, Gradients, Graph, Initializer, ParamStore};
use crate::encoder::{CharVocab, PARAM_PREFIX as ENCODER_PREFIX};
use crate::knowledge::{KnowledgeBase, RandomEmbeddings};
use crate::lattice::{CharSeq, Dictionary};
use crate::model::{LetNet, PreparedPair, Preprocessor};
use crate::{Error, Result};
use checkpoint::Manifest;

/// A labelled pair after preprocessing.
pub type Labelled = (PreparedPair, bool);

/// Accuracy, positive-class F1 and mean BCE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub f1: f64,
    pub loss: f64,
}

impl Metrics {
    /// Threshold 0.5; F1 is 0 when precision + recall is 0.
    pub fn from_predictions(probs: &[f64], labels: &[bool]) -> Result<Self> {
        if probs.is_empty() || probs.len() != labels.len() {
            return Err(Error::NoExamples);
        }
        let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
        let mut loss = 0.0;
        for (&p, &y) in probs.iter().zip(labels) {
            let pred = p >= 0.5;
            match (pred, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            correct += usize::from(pred == y);
            let p = p.clamp(crate::model::BCE_EPS, 1.0 - crate::model::BCE_EPS);
            loss -= if y { p.ln() } else { (1.0 - p).ln() };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Self {
            acc: correct as f64 / probs.len() as f64,
            f1,
            loss: loss / probs.len() as f64,
        })
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub acc: f64,
    pub f1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
    /// Epoch whose parameters were kept (best dev ACC, or the last epoch).
    pub best_epoch: usize,
}

/// Everything needed to run the model: config, preprocessing, vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct Session {
    pub config: RunConfig,
    pub pre: Preprocessor,
    pub vocab: CharVocab,
    pub store: ParamStore,
    pub net: LetNet,
}

/// Dictionaries and knowledge base named by `config`.
pub fn build_preprocessor(config: &RunConfig) -> Result<Preprocessor> {
    let mut cache: HashMap<PathBuf, Dictionary> = HashMap::new();
    let mut segmenters = Vec::new();
    for (strategy, path) in config.active_segmenters()? {
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), Dictionary::load(&path)?);
        }
        segmenters.push((strategy, cache[&path].clone()));
    }
    let random = RandomEmbeddings {
        dim: config.d_sem,
        seed: config.seed,
    };
    let kb = match &config.kb_path {
        Some(p) => KnowledgeBase::load(p, config.sememe_emb_path.as_deref(), random)?,
        None => KnowledgeBase::empty(config.d_sem),
    };
    Preprocessor::new(segmenters, kb, config.use_sense)
}

/// Vocabulary over both sides of every example.
pub fn build_vocab(examples: &[PairExample]) -> CharVocab {
    CharVocab::build(examples.iter().flat_map(|e| [&e.text_a, &e.text_b]))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dropout seed for one pair in one epoch.
fn pair_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix(mix(seed ^ mix(epoch as u64)) ^ index as u64)
}

impl Session {
    /// Fresh parameters initialized from `config.seed`.
    pub fn new(config: RunConfig, vocab: CharVocab) -> Result<Self> {
        let pre = build_preprocessor(&config)?;
        Self::with_preprocessor(config, vocab, pre)
    }

    pub fn with_preprocessor(config: RunConfig, vocab: CharVocab, pre: Preprocessor) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let init = Initializer::new(config.seed);
        let net = LetNet::new(&mut store, &init, &config.model(), vocab.len(), pre.kb())?;
        Ok(Self {
            config,
            pre,
            vocab,
            store,
            net,
        })
    }

    /// Rebuilds the model from a checkpoint. Dictionaries and the KB are
    /// reloaded from the paths in the stored config.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (manifest, buffers) = checkpoint::read(path)?;
        let vocab = CharVocab::from_tsv(&manifest.vocab, path)?;
        let mut session = Self::new(manifest.config.clone(), vocab)?;
        if session.pre.kb().sememes() != manifest.sememes.as_slice() && session.net.senses.is_some() {
            return Err(Error::Checkpoint(
                "knowledge base sememes differ from the checkpoint".into(),
            ));
        }
        checkpoint::restore(&mut session.store, &manifest, buffers)?;
        Ok(session)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            seed: self.config.seed,
            params: checkpoint::manifest_params(&self.store),
            vocab: self.vocab.to_tsv(),
            sememes: self.pre.kb().sememes().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.manifest(), &self.store)
    }

    pub fn prepare_pair(&self, a: &CharSeq, b: &CharSeq) -> Result<PreparedPair> {
        self.pre.pair(a, b)
    }

    pub fn prepare(&self, examples: &[PairExample]) -> Result<Vec<Labelled>> {
        examples
            .iter()
            .map(|e| Ok((self.pre.pair(&e.text_a, &e.text_b)?, e.label)))
            .collect()
    }

    /// Eval-mode probabilities, computed in parallel.
    pub fn predict(&self, pairs: &[&PreparedPair]) -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|pair| {
                let mut g = Graph::new(&self.store);
                self.net.predict(&mut g, &self.vocab, pair)
            })
            .collect()
    }

    pub fn evaluate(&self, data: &[Labelled]) -> Result<Metrics> {
        if data.is_empty() {
            return Err(Error::NoExamples);
        }
        let pairs: Vec<&PreparedPair> = data.iter().map(|(p, _)| p).collect();
        let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        Metrics::from_predictions(&self.predict(&pairs)?, &labels)
    }

    /// Tape gradients of the summed eval-mode BCE against finite differences.
    pub fn gradcheck(&mut self, data: &[Labelled], samples: usize, seed: u64) -> Result<GradCheckReport> {
        let batch: Vec<(&PreparedPair, bool)> = data.iter().map(|(p, y)| (p, *y)).collect();
        let (net, vocab) = (&self.net, &self.vocab);
        gradient_check(&mut self.store, samples, seed, |g| net.batch_loss(g, vocab, &batch))
    }

    /// Loss and parameter gradients of one pair on its own training graph.
    fn pair_gradients(&self, pair: &PreparedPair, label: bool, seed: u64) -> Result<(f64, Gradients)> {
        let mut g = Graph::training(&self.store, seed);
        let loss = self.net.batch_loss(&mut g, &self.vocab, &[(pair, label)])?;
        let value = g.scalar(loss);
        Ok((value, g.backward(loss)?))
    }

    /// Mini-batch RMSProp with summed per-batch loss. Per-pair gradients may
    /// be computed in parallel; they are reduced in batch order, so results do
    /// not depend on the thread count. With a dev set, the parameters of the
    /// best dev-ACC epoch are kept and training stops after `patience` epochs
    /// without improvement.
    pub fn train(&mut self, train: &[Labelled], dev: Option<&[Labelled]>, log: Option<&Path>) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::NoExamples);
        }
        let cfg = self.config.clone();
        let per_epoch = train.len().div_ceil(cfg.batch_size);
        let total = cfg.epochs * per_epoch;
        let mut writer = match log {
            Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        let mut emit = |rec: &EpochRecord, records: &mut Vec<EpochRecord>| -> Result<()> {
            if let (Some(w), Some(p)) = (writer.as_mut(), log) {
                let line = serde_json::to_string(rec).map_err(|e| Error::Config(e.to_string()))?;
                writeln!(w, "{line}")
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(p, e))?;
            }
            records.push(rec.clone());
            Ok(())
        };

        let mut opt = RmsProp::new(cfg.rho, cfg.eps);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut records = Vec::new();
        let mut step = 0;
        let mut best: Option<(f64, usize, ParamStore)> = None;
        let mut best_epoch = 0;
        let mut stale = 0;

        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(cfg.batch_size) {
                step += 1;
                let results: Vec<(f64, Gradients)> = batch
                    .par_iter()
                    .map(|&i| self.pair_gradients(&train[i].0, train[i].1, pair_seed(cfg.seed, epoch, i)))
                    .collect::<Result<_>>()?;
                let loss: f64 = results.iter().map(|(l, _)| l).sum();
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                self.store.zero_grads();
                for (_, grads) in &results {
                    grads.accumulate_into(&mut self.store)?;
                }
                let lr = lr_schedule(step, total, cfg.lr, cfg.warmup_ratio);
                opt.step(&mut self.store, |_, name| {
                    if name.starts_with(ENCODER_PREFIX) {
                        lr * cfg.encoder_lr_factor
                    } else {
                        lr
                    }
                })?;
            }
            self.store.zero_grads();

            let m = self.evaluate(train)?;
            emit(&record(epoch, "train", m), &mut records)?;
            best_epoch = epoch;
            if let Some(dev) = dev {
                let m = self.evaluate(dev)?;
                emit(&record(epoch, "dev", m), &mut records)?;
                match &best {
                    Some((acc, _, _)) if m.acc <= *acc => stale += 1,
                    _ => {
                        best = Some((m.acc, epoch, self.store.clone()));
                        stale = 0;
                    }
                }
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        if let Some((_, epoch, store)) = best {
            self.store = store;
            best_epoch = epoch;
        }
        Ok(TrainReport {
            records,
            steps: step,
            best_epoch,
        })
    }
}

fn record(epoch: usize, split: &str, m: Metrics) -> EpochRecord {
    EpochRecord {
        epoch,
        split: split.to_string(),
        acc: m.acc,
        f1: m.f1,
        loss: m.loss,
    }
}
