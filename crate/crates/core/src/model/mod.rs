//! The LET stack: encoder, lattice word and sense initialization, SaGT
//! layers, character fusion, bilateral matching and the relation classifier.

mod matching;
mod sagt;

pub use matching::{bce_loss, fuse_chars, match_sentences, Classifier, FuseParams, MatchParams, SideMatch, BCE_EPS};
pub use sagt::{sagt_layer, Gru, NodeState, SagtLayerParams, Update};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Initializer, ParamId, ParamStore, Var};
use crate::encoder::{CharVocab, EncodedPair, Encoder, EncoderConfig};
use crate::gnn::{AttPoolParams, MdGatParams};
use crate::knowledge::KnowledgeBase;
use crate::lattice::{CharSeq, Dictionary, LatticeGraph, Strategy};
use crate::nn::{LayerNormParams, Linear};
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width `d`.
    pub dim: usize,
    /// Number of SaGT layers `L`; 0 skips them.
    pub layers: usize,
    /// Cosine perspectives `P`.
    pub perspectives: usize,
    pub dropout: f64,
    pub enc_layers: usize,
    pub enc_heads: usize,
    /// Packed pair length including `[CLS]` and both `[SEP]`.
    pub max_len: usize,
    pub use_sense: bool,
    pub use_gru: bool,
    pub train_sememe_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 2,
            perspectives: 20,
            dropout: 0.2,
            enc_layers: 2,
            enc_heads: 4,
            max_len: 128,
            use_sense: true,
            use_gru: true,
            train_sememe_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.perspectives == 0 {
            return Err(Error::Config("P must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            layers: self.enc_layers,
            heads: self.enc_heads,
            max_len: self.max_len,
            dropout: self.dropout,
        }
    }
}

/// One sentence after segmentation and knowledge lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSentence {
    pub text: CharSeq,
    pub lattice: LatticeGraph,
    /// Node ids covering each character.
    pub membership: Vec<Vec<usize>>,
    /// Per node, per sense, rows of the sememe table.
    pub senses: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPair {
    pub a: PreparedSentence,
    pub b: PreparedSentence,
}

/// Builds lattices and attaches senses.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    segmenters: Vec<(Strategy, Dictionary)>,
    kb: KnowledgeBase,
    use_sense: bool,
}

impl Preprocessor {
    pub fn new(segmenters: Vec<(Strategy, Dictionary)>, kb: KnowledgeBase, use_sense: bool) -> Result<Self> {
        if segmenters.is_empty() {
            return Err(Error::Config("at least one segmenter is required".into()));
        }
        Ok(Self {
            segmenters,
            kb,
            use_sense,
        })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn lattice(&self, text: &CharSeq) -> Result<LatticeGraph> {
        Ok(LatticeGraph::from_segmenters(
            text,
            self.segmenters.iter().map(|(s, d)| (*s, d)),
        )?)
    }

    pub fn sentence(&self, text: &CharSeq) -> Result<PreparedSentence> {
        if text.is_empty() {
            return Err(Error::EmptySentence);
        }
        let lattice = self.lattice(text)?;
        let senses = lattice
            .nodes()
            .iter()
            .map(|n| {
                if !self.use_sense {
                    return Vec::new();
                }
                self.kb
                    .lookup(&n.surface)
                    .iter()
                    .map(|s| {
                        s.sememes
                            .iter()
                            .map(|id| self.kb.sememe_index(id).expect("sememes of loaded senses are indexed"))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(PreparedSentence {
            text: text.clone(),
            membership: lattice.char_membership(),
            lattice,
            senses,
        })
    }

    pub fn pair(&self, a: &CharSeq, b: &CharSeq) -> Result<PreparedPair> {
        Ok(PreparedPair {
            a: self.sentence(a)?,
            b: self.sentence(b)?,
        })
    }
}

/// Sense initialization from sememes.
#[derive(Clone, Copy, Debug)]
pub struct SenseParams {
    /// `[num_sememes, d_sem]`
    pub sememe_emb: ParamId,
    /// `d_sem → d`
    pub proj: Linear,
    pub gat: MdGatParams,
    pub pool: AttPoolParams,
}

impl SenseParams {
    /// `s = AttPool_j(MD-GAT(p_j, {p_j'}))` with `p_j = proj(e_j)`.
    pub fn sense(&self, g: &mut Graph<'_>, sememes: &[usize], dropout: f64) -> Result<Var> {
        if sememes.is_empty() {
            return Err(Error::EmptySet { op: "sense_init" });
        }
        let table = g.param(self.sememe_emb)?;
        let e = g.gather_rows(table, sememes)?;
        let p = self.proj.forward(g, e)?;
        let nb = self.gat.prepare(g, p)?;
        let mut ctx = Vec::with_capacity(sememes.len());
        for j in 0..sememes.len() {
            let q = g.slice(p, Axis::Rows, j, 1)?;
            let o = self.gat.attend(g, q, &nb)?;
            ctx.push(g.dropout(o, dropout)?);
        }
        self.pool.pool(g, &ctx)
    }
}

/// Parameter layout of the whole model. Values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct LetNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub word_pool: AttPoolParams,
    /// Present only when senses are in use, the KB references sememes and L > 0.
    pub senses: Option<SenseParams>,
    pub layers: Vec<SagtLayerParams>,
    /// Residual norms applied to updated word reps between consecutive layers.
    pub between: Vec<LayerNormParams>,
    pub fuse: FuseParams,
    pub matching: MatchParams,
    pub classifier: Classifier,
}

/// Intermediate values of one sentence.
#[derive(Clone, Debug)]
pub struct SentenceTrace {
    pub chars: Var,
    pub initial: NodeState,
    /// Node state after each SaGT layer.
    pub layers: Vec<NodeState>,
    pub fused: Var,
    pub matched: SideMatch,
}

impl SentenceTrace {
    pub fn final_words(&self) -> &[Var] {
        self.layers.last().unwrap_or(&self.initial).words.as_slice()
    }
}

#[derive(Clone, Debug)]
pub struct PairTrace {
    pub encoded: EncodedPair,
    pub a: SentenceTrace,
    pub b: SentenceTrace,
    /// `[1, 1]` probability of the pair being equivalent.
    pub p: Var,
}

impl LetNet {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        config: &ModelConfig,
        vocab_size: usize,
        kb: &KnowledgeBase,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let encoder = Encoder::new(store, init, vocab_size, config.encoder())?;
        let word_pool = AttPoolParams::new(store, init, "word_pool", d)?;
        let senses = match kb.embedding_matrix() {
            Some(table) if config.use_sense && config.layers > 0 => {
                let table = table.with_requires_grad(config.train_sememe_embeddings);
                Some(SenseParams {
                    sememe_emb: store.insert("knowledge.sememe_emb", table)?,
                    proj: Linear::new(store, init, "knowledge.proj", kb.dim(), d)?,
                    gat: MdGatParams::new(store, init, "knowledge.gat", d)?,
                    pool: AttPoolParams::new(store, init, "knowledge.pool", d)?,
                })
            }
            _ => None,
        };
        let layers = (0..config.layers)
            .map(|l| SagtLayerParams::new(store, init, &format!("sagt{l}"), d, config.use_gru))
            .collect::<Result<Vec<_>>>()?;
        let between = (0..config.layers.saturating_sub(1))
            .map(|l| LayerNormParams::new(store, init, &format!("sagt{l}.out_norm"), d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            encoder,
            word_pool,
            senses,
            layers,
            between,
            fuse: FuseParams::new(store, init, "fuse", d)?,
            matching: MatchParams::new(store, init, "match", d, config.perspectives)?,
            classifier: Classifier::new(store, init, "classifier", d)?,
        })
    }

    /// `v_i`: attentive pooling of the characters each node spans.
    pub fn init_word_reps(&self, g: &mut Graph<'_>, chars: Var, lattice: &LatticeGraph) -> Result<Vec<Var>> {
        lattice
            .nodes()
            .iter()
            .map(|n| {
                let span = g.slice(chars, Axis::Rows, n.start - 1, n.len())?;
                self.word_pool.pool_matrix(g, span)
            })
            .collect()
    }

    /// Initial node state: word reps plus one sense rep per KB sense.
    pub fn init_state(&self, g: &mut Graph<'_>, chars: Var, sentence: &PreparedSentence) -> Result<NodeState> {
        let words = self.init_word_reps(g, chars, &sentence.lattice)?;
        let senses = match (&self.senses, self.layers.is_empty()) {
            (Some(sp), false) => sentence
                .senses
                .iter()
                .map(|node| {
                    node.iter()
                        .map(|sememes| sp.sense(g, sememes, self.config.dropout))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
            _ => vec![Vec::new(); words.len()],
        };
        Ok(NodeState { words, senses })
    }

    /// Runs every SaGT layer, returning the state after each. Between
    /// consecutive layers, updated word reps get `LayerNorm(input + output)`.
    pub fn run_layers(&self, g: &mut Graph<'_>, lattice: &LatticeGraph, initial: &NodeState) -> Result<Vec<NodeState>> {
        let mut out: Vec<NodeState> = Vec::with_capacity(self.layers.len());
        let mut input = initial.clone();
        for (l, params) in self.layers.iter().enumerate() {
            let output = sagt_layer(g, params, lattice, &input, self.config.dropout)?;
            if let Some(norm) = self.between.get(l) {
                let mut words = output.words.clone();
                for i in (0..words.len()).filter(|&i| output.has_senses(i)) {
                    let sum = g.add(input.words[i], output.words[i])?;
                    words[i] = norm.forward(g, sum)?;
                }
                input = NodeState {
                    words,
                    senses: output.senses.clone(),
                };
            }
            out.push(output);
        }
        Ok(out)
    }

    fn sentence_front(
        &self,
        g: &mut Graph<'_>,
        chars: Var,
        sentence: &PreparedSentence,
    ) -> Result<(NodeState, Vec<NodeState>, Var)> {
        let initial = self.init_state(g, chars, sentence)?;
        let layers = self.run_layers(g, &sentence.lattice, &initial)?;
        let words = &layers.last().unwrap_or(&initial).words;
        let fused = fuse_chars(g, &self.fuse, chars, words, &sentence.membership)?;
        Ok((initial, layers, fused))
    }

    /// Full forward pass for one pair.
    pub fn forward(&self, g: &mut Graph<'_>, vocab: &CharVocab, pair: &PreparedPair) -> Result<PairTrace> {
        let encoded = self.encoder.encode_pair(g, vocab, &pair.a.text, &pair.b.text)?;
        let (init_a, layers_a, fused_a) = self.sentence_front(g, encoded.reps_a, &pair.a)?;
        let (init_b, layers_b, fused_b) = self.sentence_front(g, encoded.reps_b, &pair.b)?;
        let (match_a, match_b) = match_sentences(g, &self.matching, fused_a, fused_b, self.config.dropout)?;
        let p = self
            .classifier
            .forward(g, encoded.cls, match_a.sentence, match_b.sentence, self.config.dropout)?;
        Ok(PairTrace {
            a: SentenceTrace {
                chars: encoded.reps_a,
                initial: init_a,
                layers: layers_a,
                fused: fused_a,
                matched: match_a,
            },
            b: SentenceTrace {
                chars: encoded.reps_b,
                initial: init_b,
                layers: layers_b,
                fused: fused_b,
                matched: match_b,
            },
            encoded,
            p,
        })
    }

    /// Probability only.
    pub fn predict(&self, g: &mut Graph<'_>, vocab: &CharVocab, pair: &PreparedPair) -> Result<f64> {
        let trace = self.forward(g, vocab, pair)?;
        Ok(g.scalar(trace.p))
    }

    /// Summed BCE over a batch of labelled pairs on one graph.
    pub fn batch_loss(&self, g: &mut Graph<'_>, vocab: &CharVocab, batch: &[(&PreparedPair, bool)]) -> Result<Var> {
        let mut probs = Vec::with_capacity(batch.len());
        for (pair, label) in batch {
            probs.push((self.forward(g, vocab, pair)?.p, *label));
        }
        bce_loss(g, &probs)
    }
}
