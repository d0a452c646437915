//! Character fusion, bilateral multi-perspective matching, the relation
//! classifier and the loss.

use crate::autodiff::{Axis, Graph, Initializer, ParamId, ParamStore, Var};
use crate::gnn::{AttPoolParams, MdGatParams};
use crate::nn::{FeedForward, LayerNormParams, Linear};
use crate::{Error, Result};

/// Probability clamp applied before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct FuseParams {
    pub pool: AttPoolParams,
    pub norm: LayerNormParams,
}

impl FuseParams {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            pool: AttPoolParams::new(store, init, &format!("{path}.pool"), dim)?,
            norm: LayerNormParams::new(store, init, &format!("{path}.norm"), dim)?,
        })
    }
}

/// `y_t = LayerNorm(c_t + AttPool{h_i | node i contains t})` for every character.
///
/// `chars` is `[T, d]`; `membership[t]` lists the node ids covering character `t`.
pub fn fuse_chars(
    g: &mut Graph<'_>,
    params: &FuseParams,
    chars: Var,
    words: &[Var],
    membership: &[Vec<usize>],
) -> Result<Var> {
    let mut pooled = Vec::with_capacity(membership.len());
    for (t, members) in membership.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Uncovered { index: t });
        }
        let reps: Vec<Var> = members.iter().map(|&i| words[i]).collect();
        pooled.push(params.pool.pool(g, &reps)?);
    }
    let fused = g.concat(&pooled, Axis::Rows)?;
    let sum = g.add(chars, fused)?;
    params.norm.forward(g, sum)
}

#[derive(Clone, Copy, Debug)]
pub struct MatchParams {
    /// Shared by self and cross attention.
    pub gat: MdGatParams,
    /// `[P, d]`, row `k` is `w_k`.
    pub w_cos: ParamId,
    pub perspectives: usize,
    pub ffn: FeedForward,
    pub pool: AttPoolParams,
}

impl MatchParams {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        path: &str,
        dim: usize,
        perspectives: usize,
    ) -> Result<Self> {
        if perspectives == 0 {
            return Err(Error::Config("P must be at least 1".into()));
        }
        let w_path = format!("{path}.w_cos");
        let w_cos = store.insert(
            w_path.clone(),
            init.uniform(&w_path, perspectives, dim, 1.0 / (dim as f64).sqrt()),
        )?;
        Ok(Self {
            gat: MdGatParams::new(store, init, &format!("{path}.gat"), dim)?,
            w_cos,
            perspectives,
            ffn: FeedForward::new(store, init, &format!("{path}.ffn"), dim + perspectives, dim, dim)?,
            pool: AttPoolParams::new(store, init, &format!("{path}.pool"), dim)?,
        })
    }

    /// `[1, P]` vector of `cos(w_k ⊙ a, w_k ⊙ b)`.
    pub fn perspective_cosine(&self, g: &mut Graph<'_>, a: Var, b: Var) -> Result<Var> {
        let w = g.param(self.w_cos)?;
        let ones = g.filled(self.perspectives, 1, 1.0)?;
        let ta = g.matmul(ones, a)?;
        let ta = g.mul(ta, w)?;
        let tb = g.matmul(ones, b)?;
        let tb = g.mul(tb, w)?;
        let cos = g.cosine_rows(ta, tb)?;
        Ok(g.transpose(cos)?)
    }
}

/// Matching output for one side of the pair.
#[derive(Clone, Debug)]
pub struct SideMatch {
    /// `r`, `[1, d]`.
    pub sentence: Var,
    /// `d_t` per character, each `[1, P]`.
    pub distances: Vec<Var>,
}

fn match_side(g: &mut Graph<'_>, params: &MatchParams, own: Var, other: Var, dropout: f64) -> Result<SideMatch> {
    let own_nb = params.gat.prepare(g, own)?;
    let other_nb = params.gat.prepare(g, other)?;
    let (t_len, _) = g.shape(own);
    let mut finals = Vec::with_capacity(t_len);
    let mut distances = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let y = g.slice(own, Axis::Rows, t, 1)?;
        let m_self = params.gat.attend(g, y, &own_nb)?;
        let m_self = g.dropout(m_self, dropout)?;
        let m_cross = params.gat.attend(g, y, &other_nb)?;
        let m_cross = g.dropout(m_cross, dropout)?;
        let d = params.perspective_cosine(g, m_self, m_cross)?;
        let joined = g.concat(&[m_self, d], Axis::Cols)?;
        finals.push(params.ffn.forward(g, joined, dropout)?);
        distances.push(d);
    }
    Ok(SideMatch {
        sentence: params.pool.pool(g, &finals)?,
        distances,
    })
}

/// Bilateral matching of fused character matrices `y_a` `[T_a, d]` and `y_b` `[T_b, d]`.
pub fn match_sentences(
    g: &mut Graph<'_>,
    params: &MatchParams,
    y_a: Var,
    y_b: Var,
    dropout: f64,
) -> Result<(SideMatch, SideMatch)> {
    let a = match_side(g, params, y_a, y_b, dropout)?;
    let b = match_side(g, params, y_b, y_a, dropout)?;
    Ok((a, b))
}

/// `σ(FFN([cls, r_a, r_b, r_a ⊙ r_b, |r_a − r_b|]))` with two hidden ReLU layers of width d.
#[derive(Clone, Copy, Debug)]
pub struct Classifier {
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, init, &format!("{path}.1"), 5 * dim, dim)?,
            l2: Linear::new(store, init, &format!("{path}.2"), dim, dim)?,
            out: Linear::new(store, init, &format!("{path}.3"), dim, 1)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, cls: Var, r_a: Var, r_b: Var, dropout: f64) -> Result<Var> {
        let prod = g.mul(r_a, r_b)?;
        let diff = g.sub(r_a, r_b)?;
        let diff = g.abs(diff)?;
        let x = g.concat(&[cls, r_a, r_b, prod, diff], Axis::Cols)?;
        let mut h = x;
        for layer in [&self.l1, &self.l2] {
            h = layer.forward(g, h)?;
            h = g.relu(h);
            h = g.dropout(h, dropout)?;
        }
        let logit = self.out.forward(g, h)?;
        Ok(g.sigmoid(logit))
    }
}

/// `−Σ [y ln p + (1 − y) ln(1 − p)]` over `[1, 1]` probabilities, p clamped to `[ε, 1 − ε]`.
pub fn bce_loss(g: &mut Graph<'_>, probs: &[(Var, bool)]) -> Result<Var> {
    if probs.is_empty() {
        return Err(Error::EmptySet { op: "bce_loss" });
    }
    let mut terms = Vec::with_capacity(probs.len());
    for &(p, label) in probs {
        let p = g.clamp(p, BCE_EPS, 1.0 - BCE_EPS);
        let target = if label {
            p
        } else {
            let one = g.filled(1, 1, 1.0)?;
            g.sub(one, p)?
        };
        let ll = g.ln(target);
        terms.push(g.scale(ll, -1.0)?);
    }
    let stacked = g.concat(&terms, Axis::Rows)?;
    Ok(g.sum_all(stacked))
}
