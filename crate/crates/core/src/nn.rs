//! Small building blocks shared by the encoder and the graph layers.

use crate::autodiff::{Graph, Initializer, ParamId, ParamStore, Var};
use crate::Result;

/// `x · W + b` on row vectors. `W` is `[fan_in, fan_out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = store.insert(format!("{path}.w"), init.weight(&format!("{path}.w"), fan_in, fan_out))?;
        let b = store.insert(format!("{path}.b"), init.zeros(1, fan_out))?;
        Ok(Self { w, b: Some(b) })
    }

    pub fn without_bias(
        store: &mut ParamStore,
        init: &Initializer,
        path: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let w = store.insert(path.to_string(), init.weight(path, fan_in, fan_out))?;
        Ok(Self { w, b: None })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b)?;
                Ok(g.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize) -> Result<Self> {
        let gamma = store.insert(format!("{path}.gamma"), init.ones(1, dim))?;
        let beta = store.insert(format!("{path}.beta"), init.zeros(1, dim))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        Ok(g.layer_norm(x, gamma, beta)?)
    }
}

/// Two-layer network `W2 · relu(W1 x + b1) + b2`, with dropout on the hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        path: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, init, &format!("{path}.1"), input, hidden)?,
            output: Linear::new(store, init, &format!("{path}.2"), hidden, output)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout)?;
        self.output.forward(g, h)
    }
}

/// `LayerNorm(x + f(x))`.
pub fn residual_norm(g: &mut Graph<'_>, x: Var, fx: Var, norm: &LayerNormParams) -> Result<Var> {
    let sum = g.add(x, fx)?;
    norm.forward(g, sum)
}
