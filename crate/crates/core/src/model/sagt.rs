//! Semantic-aware graph transformer layers.

use crate::autodiff::{Axis, Graph, Initializer, ParamStore, Var};
use crate::gnn::{MdGatParams, Neighbors};
use crate::lattice::LatticeGraph;
use crate::nn::Linear;
use crate::Result;

/// Gated recurrent unit, Cho et al. form: `h' = z ⊙ h + (1 − z) ⊙ h̃`.
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    x_z: Linear,
    x_r: Linear,
    x_h: Linear,
    h_z: Linear,
    h_r: Linear,
    h_h: Linear,
}

impl Gru {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, input: usize, hidden: usize) -> Result<Self> {
        let lin = |s: &mut ParamStore, n: &str| Linear::new(s, init, &format!("{path}.{n}"), input, hidden);
        let rec = |s: &mut ParamStore, n: &str| Linear::without_bias(s, init, &format!("{path}.{n}"), hidden, hidden);
        Ok(Self {
            x_z: lin(store, "x_z")?,
            x_r: lin(store, "x_r")?,
            x_h: lin(store, "x_h")?,
            h_z: rec(store, "h_z")?,
            h_r: rec(store, "h_r")?,
            h_h: rec(store, "h_h")?,
        })
    }

    /// One step from state `h` `[1, hidden]` with input `x` `[1, input]`.
    pub fn step(&self, g: &mut Graph<'_>, h: Var, x: Var) -> Result<Var> {
        let gate = |g: &mut Graph<'_>, wx: &Linear, uh: &Linear, state: Var| -> Result<Var> {
            let a = wx.forward(g, x)?;
            let b = uh.forward(g, state)?;
            Ok(g.add(a, b)?)
        };
        let z = gate(g, &self.x_z, &self.h_z, h)?;
        let z = g.sigmoid(z);
        let r = gate(g, &self.x_r, &self.h_r, h)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let cand = gate(g, &self.x_h, &self.h_h, rh)?;
        let cand = g.tanh(cand);
        let keep = g.mul(z, h)?;
        let (_, d) = g.shape(z);
        let ones = g.filled(1, d, 1.0)?;
        let one_minus_z = g.sub(ones, z)?;
        let new = g.mul(one_minus_z, cand)?;
        Ok(g.add(keep, new)?)
    }
}

/// How a layer turns aggregated messages into new states.
#[derive(Clone, Copy, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Update {
    Gru {
        sense: Gru,
        word: Gru,
    },
    /// `g = W [m_fw, m_bw]`, `h = q`.
    Direct {
        sense_merge: Linear,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct SagtLayerParams {
    pub sense_fw: MdGatParams,
    pub sense_bw: MdGatParams,
    pub word: MdGatParams,
    pub update: Update,
}

impl SagtLayerParams {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize, use_gru: bool) -> Result<Self> {
        let update = if use_gru {
            Update::Gru {
                sense: Gru::new(store, init, &format!("{path}.sense_gru"), 2 * dim, dim)?,
                word: Gru::new(store, init, &format!("{path}.word_gru"), dim, dim)?,
            }
        } else {
            Update::Direct {
                sense_merge: Linear::new(store, init, &format!("{path}.sense_merge"), 2 * dim, dim)?,
            }
        };
        Ok(Self {
            sense_fw: MdGatParams::new(store, init, &format!("{path}.sense_fw"), dim)?,
            sense_bw: MdGatParams::new(store, init, &format!("{path}.sense_bw"), dim)?,
            word: MdGatParams::new(store, init, &format!("{path}.word"), dim)?,
            update,
        })
    }
}

/// Word and sense representations of one sentence's lattice nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    /// `h_i`, one `[1, d]` var per node.
    pub words: Vec<Var>,
    /// `g_{i,k}`; empty for nodes without senses.
    pub senses: Vec<Vec<Var>>,
}

impl NodeState {
    pub fn has_senses(&self, node: usize) -> bool {
        !self.senses[node].is_empty()
    }
}

fn neighbor_sets(
    g: &mut Graph<'_>,
    gat: &MdGatParams,
    words: &[Var],
    reach: impl Fn(usize) -> Vec<usize>,
    nodes: &[usize],
) -> Result<Vec<Option<Neighbors>>> {
    let mut out = vec![None; words.len()];
    for &i in nodes {
        let members: Vec<Var> = reach(i).into_iter().map(|j| words[j]).collect();
        let stacked = g.concat(&members, Axis::Rows)?;
        out[i] = Some(gat.prepare(g, stacked)?);
    }
    Ok(out)
}

/// One SaGT layer. Senses update first from forward and backward reachable
/// words; words with at least one sense then update from their new senses.
/// Words without senses keep the same var.
pub fn sagt_layer(
    g: &mut Graph<'_>,
    params: &SagtLayerParams,
    lattice: &LatticeGraph,
    state: &NodeState,
    dropout: f64,
) -> Result<NodeState> {
    let active: Vec<usize> = (0..lattice.len()).filter(|&i| state.has_senses(i)).collect();
    let fw = neighbor_sets(
        g,
        &params.sense_fw,
        &state.words,
        |i| lattice.fw_reach(i).to_vec(),
        &active,
    )?;
    let bw = neighbor_sets(
        g,
        &params.sense_bw,
        &state.words,
        |i| lattice.bw_reach(i).to_vec(),
        &active,
    )?;

    let mut senses = state.senses.clone();
    for &i in &active {
        let (fw_nb, bw_nb) = (fw[i].as_ref().expect("prepared"), bw[i].as_ref().expect("prepared"));
        for (k, &sense) in state.senses[i].iter().enumerate() {
            let m_fw = params.sense_fw.attend(g, sense, fw_nb)?;
            let m_fw = g.dropout(m_fw, dropout)?;
            let m_bw = params.sense_bw.attend(g, sense, bw_nb)?;
            let m_bw = g.dropout(m_bw, dropout)?;
            let m = g.concat(&[m_fw, m_bw], Axis::Cols)?;
            senses[i][k] = match &params.update {
                Update::Gru { sense: gru, .. } => gru.step(g, sense, m)?,
                Update::Direct { sense_merge } => sense_merge.forward(g, m)?,
            };
        }
    }

    let mut words = state.words.clone();
    for &i in &active {
        let h = state.words[i];
        let q = params.word.forward(g, h, &senses[i])?;
        let q = g.dropout(q, dropout)?;
        words[i] = match &params.update {
            Update::Gru { word: gru, .. } => gru.step(g, h, q)?,
            Update::Direct { .. } => q,
        };
    }
    Ok(NodeState { words, senses })
}
