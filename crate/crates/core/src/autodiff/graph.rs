//! Dynamic tape. Every forward pass builds a fresh [`Graph`]; nodes are
//! appended in evaluation order, so the node list is already topologically
//! sorted and backward is a single reverse sweep.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows; result is `[1, cols]`.
    Rows,
    /// Reduce over columns; result is `[rows, 1]`.
    Cols,
}

/// Denominator floor of [`Graph::cosine_rows`].
pub const COSINE_EPS: f64 = 1e-8;
/// Variance offset of [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        inputs: Vec<Var>,
        axis: Axis,
    },
    Slice {
        input: Var,
        axis: Axis,
        start: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var, Axis),
    Mean(Var, Axis),
    SumAll(Var),
    Softmax(Var, Axis),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Cosine {
        a: Var,
        b: Var,
        norm_a: Vec<f64>,
        norm_b: Vec<f64>,
    },
    Maximum(Var, Var),
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A taped computation over matrices.
///
/// Parameters are pulled from a borrowed [`ParamStore`] on first use and
/// bound once per graph, so a parameter used many times is a single leaf
/// whose gradient sums every use.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store, in eval mode.
    pub fn detached() -> Graph<'static> {
        Graph {
            nodes: Vec::new(),
            params: None,
            bound: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Eval-mode graph over `params`.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            bound: vec![None; params.len()],
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph: dropout active, masks drawn from `seed`.
    pub fn training(params: &'p ParamStore, seed: u64) -> Self {
        let mut g = Self::new(params);
        g.training = true;
        g.rng = ChaCha8Rng::seed_from_u64(seed);
        g
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.data.clone()).expect("node shapes are positive")
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        let n = &self.nodes[v.0];
        vec![n.rows, n.cols]
    }

    fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize), TensorError> {
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(TensorError::Rank { op, shape: s.to_vec() }),
        }
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, TensorError> {
        let (r, c) = Self::matrix_dims(&t, "constant")?;
        Ok(self.push(r, c, t.into_data(), Op::Constant, false))
    }

    pub fn row(&mut self, values: Vec<f64>) -> Result<Var, TensorError> {
        self.constant(Tensor::row(values)?)
    }

    pub fn filled(&mut self, rows: usize, cols: usize, value: f64) -> Result<Var, TensorError> {
        self.constant(Tensor::filled(vec![rows, cols], value)?)
    }

    /// Binds a parameter (once per graph) and returns its leaf.
    pub fn param(&mut self, id: ParamId) -> Result<Var, TensorError> {
        if let Some(v) = self.bound.get(id.0).copied().flatten() {
            return Ok(v);
        }
        let store = self.params.ok_or(TensorError::NoParamStore)?;
        let t = store.get(id);
        let (r, c) = Self::matrix_dims(t, "param")?;
        let v = self.push(r, c, t.data().to_vec(), Op::Param, t.requires_grad());
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// Parameters bound so far, with their leaves.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.dims(a),
                rhs: self.dims(b),
            });
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        let out = transpose_raw(self.value(a), r, c);
        let ng = self.ng(a);
        Ok(self.push(c, r, out, Op::Transpose(a), ng))
    }

    // ---- elementwise binary --------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), TensorError> {
        let sa = self.shape(a);
        if sa != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.dims(a),
                rhs: self.dims(b),
            });
        }
        Ok(sa)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (r, c) = self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    /// Matrix plus a `[1, cols]` row broadcast over every row (bias-add).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.dims(a),
                rhs: self.dims(bias),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(r, c, out, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * factor).collect();
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::Scale(a, factor), ng))
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, TensorError> {
        let first = *inputs.first().ok_or(TensorError::Empty { op: "concat" })?;
        let (r0, c0) = self.shape(first);
        let mut rows = 0;
        let mut cols = 0;
        for &v in inputs {
            let (r, c) = self.shape(v);
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: self.dims(first),
                    rhs: self.dims(v),
                });
            }
            rows += r;
            cols += c;
        }
        let (rows, cols) = match axis {
            Axis::Rows => (rows, c0),
            Axis::Cols => (r0, cols),
        };
        let mut out = Vec::with_capacity(rows * cols);
        match axis {
            Axis::Rows => {
                for &v in inputs {
                    out.extend_from_slice(self.value(v));
                }
            }
            Axis::Cols => {
                for r in 0..rows {
                    for &v in inputs {
                        let c = self.shape(v).1;
                        out.extend_from_slice(&self.value(v)[r * c..(r + 1) * c]);
                    }
                }
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            rows,
            cols,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` consecutive rows (`Axis::Rows`) or columns (`Axis::Cols`) from `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        let extent = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if len == 0 || start + len > extent {
            return Err(TensorError::Slice {
                shape: self.dims(a),
                start,
                len,
            });
        }
        let src = self.value(a);
        let (rows, cols, out) = match axis {
            Axis::Rows => (len, c, src[start * c..(start + len) * c].to_vec()),
            Axis::Cols => (
                r,
                len,
                src.chunks(c)
                    .flat_map(|row| row[start..start + len].iter().copied())
                    .collect(),
            ),
        };
        let ng = self.ng(a);
        Ok(self.push(rows, cols, out, Op::Slice { input: a, axis, start }, ng))
    }

    /// Selects rows by index (repetition allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.shape(a);
        if rows.is_empty() {
            return Err(TensorError::Empty { op: "gather_rows" });
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(TensorError::Slice {
                    shape: self.dims(a),
                    start: i,
                    len: 1,
                });
            }
            out.extend_from_slice(&self.value(a)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            rows.len(),
            c,
            out,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    // ---- unary ------------------------------------------------------------

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp { input: a, lo, hi })
    }

    /// `|a|` as `max(a, -a)`.
    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        let neg = self.scale(a, -1.0)?;
        self.maximum(a, neg)
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Var, axis: Axis) -> Var {
        let (rows, cols, out) = self.reduce(a, axis, 1.0);
        let ng = self.ng(a);
        self.push(rows, cols, out, Op::Sum(a, axis), ng)
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Var {
        let (r, c) = self.shape(a);
        let n = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        let (rows, cols, out) = self.reduce(a, axis, 1.0 / n as f64);
        let ng = self.ng(a);
        self.push(rows, cols, out, Op::Mean(a, axis), ng)
    }

    fn reduce(&self, a: Var, axis: Axis, scale: f64) -> (usize, usize, Vec<f64>) {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in src.chunks(c) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
                (1, c, out)
            }
            Axis::Cols => (r, 1, src.chunks(c).map(|row| row.iter().sum::<f64>() * scale).collect()),
        }
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![total], Op::SumAll(a), ng)
    }

    /// Softmax along `axis` with max subtraction. `-inf` entries get weight 0.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let (r, c) = self.shape(a);
        let out = softmax_raw(self.value(a), r, c, axis);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Softmax(a, axis), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma * xhat + beta` with `[1, cols]` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (r, c) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, c) {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: self.dims(x),
                    rhs: self.dims(p),
                });
            }
        }
        let src = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Row-wise cosine similarity `a·b / max(‖a‖‖b‖, ε)`; result is `[rows, 1]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = self.same_shape("cosine_similarity", a, b)?;
        let mut norm_a = Vec::with_capacity(r);
        let mut norm_b = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r);
        for (ra, rb) in self.value(a).chunks(c).zip(self.value(b).chunks(c)) {
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            out.push(dot / (na * nb).max(COSINE_EPS));
            norm_a.push(na);
            norm_b.push(nb);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, 1, out, Op::Cosine { a, b, norm_a, norm_b }, ng))
    }

    /// Inverted dropout. Identity outside training mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, TensorError> {
        if !self.training || rate <= 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::matrix(r, c, mask)?)?;
        self.mul(a, m)
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let root = &self.nodes[loss.0];
        if root.rows * root.cols != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: vec![root.rows, root.cols],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut by_param = Vec::new();
        for (id, v) in self.bound_params() {
            if let Some(g) = grads.get(v.0).and_then(|g| g.clone()) {
                if self.nodes[v.0].needs_grad {
                    by_param.push((id, g));
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: by_param,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        let y = &node.data;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.ng(*a) {
                    // dA = dC · Bᵀ
                    let bt = transpose_raw(self.value(*b), k, n);
                    self.accumulate(grads, *a, matmul_raw(g, &bt, m, n, k));
                }
                if self.ng(*b) {
                    // dB = Aᵀ · dC
                    let at = transpose_raw(self.value(*a), m, k);
                    self.accumulate(grads, *b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, transpose_raw(g, rows, cols));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.ng(*bias) {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let d = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, g.iter().map(|x| x * f).collect());
            }
            Op::Maximum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for i in 0..g.len() {
                    if va[i] >= vb[i] {
                        da[i] = g[i];
                    } else {
                        db[i] = g[i];
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = self.value(v).len();
                        self.accumulate(grads, v, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Axis::Cols => {
                    let mut offset = 0;
                    for &v in inputs {
                        let c = self.shape(v).1;
                        let d = g
                            .chunks(cols)
                            .flat_map(|row| row[offset..offset + c].iter().copied())
                            .collect();
                        self.accumulate(grads, v, d);
                        offset += c;
                    }
                }
            },
            Op::Slice { input, axis, start } => {
                let (r, c) = self.shape(*input);
                let mut d = vec![0.0; r * c];
                match axis {
                    Axis::Rows => d[start * c..start * c + g.len()].copy_from_slice(g),
                    Axis::Cols => {
                        for (i, row) in g.chunks(cols).enumerate() {
                            d[i * c + start..i * c + start + cols].copy_from_slice(row);
                        }
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::GatherRows { input, rows: idx } => {
                let (r, c) = self.shape(*input);
                let mut d = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Ln(a) => {
                let d = g.iter().zip(self.value(*a)).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input);
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, d);
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (r, c) = self.shape(*a);
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / r as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / c as f64,
                    _ => 1.0,
                };
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = scale
                            * match axis {
                                Axis::Rows => g[j],
                                Axis::Cols => g[i],
                            };
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Softmax(a, axis) => {
                // dx = y ⊙ (g − Σ_axis y⊙g)
                let mut d = vec![0.0; rows * cols];
                match axis {
                    Axis::Rows => {
                        for j in 0..cols {
                            let dot: f64 = (0..rows).map(|i| y[i * cols + j] * g[i * cols + j]).sum();
                            for i in 0..rows {
                                let k = i * cols + j;
                                d[k] = y[k] * (g[k] - dot);
                            }
                        }
                    }
                    Axis::Cols => {
                        for i in 0..rows {
                            let r = i * cols..(i + 1) * cols;
                            let dot: f64 = y[r.clone()].iter().zip(&g[r.clone()]).map(|(a, b)| a * b).sum();
                            for k in r {
                                d[k] = y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma);
                if self.ng(*beta) {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *beta, db);
                }
                if self.ng(*gamma) {
                    let mut dg = vec![0.0; cols];
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.ng(*x) {
                    let n = cols as f64;
                    let mut dx = Vec::with_capacity(rows * cols);
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        let hrow = &xhat[i * cols..(i + 1) * cols];
                        let dh: Vec<f64> = grow.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx.push(inv_std[i] / n * (n * dh[j] - sum_dh - hrow[j] * sum_dh_h));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Cosine { a, b, norm_a, norm_b } => {
                let (_, c) = self.shape(*a);
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut da = vec![0.0; va.len()];
                let mut db = vec![0.0; vb.len()];
                for i in 0..rows {
                    let (na, nb) = (norm_a[i], norm_b[i]);
                    let cos = y[i];
                    let gi = g[i];
                    let ra = &va[i * c..(i + 1) * c];
                    let rb = &vb[i * c..(i + 1) * c];
                    if na * nb > COSINE_EPS {
                        let denom = na * nb;
                        for j in 0..c {
                            da[i * c + j] = gi * (rb[j] / denom - cos * ra[j] / (na * na));
                            db[i * c + j] = gi * (ra[j] / denom - cos * rb[j] / (nb * nb));
                        }
                    } else {
                        for j in 0..c {
                            da[i * c + j] = gi * rb[j] / COSINE_EPS;
                            db[i * c + j] = gi * ra[j] / COSINE_EPS;
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not reach it.
    pub fn wrt(&self, graph: &Graph<'_>, v: Var) -> Vec<f64> {
        match self.nodes.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; graph.value(v).len()],
        }
    }

    pub fn params(&self) -> &[(ParamId, Vec<f64>)] {
        &self.params
    }

    /// Adds parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<(), TensorError> {
        for (id, g) in &self.params {
            store.get_mut(*id).accumulate_grad(g)?;
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_raw(x: &[f64], r: usize, c: usize, axis: Axis) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    let (outer, inner, stride_outer, stride_inner) = match axis {
        Axis::Cols => (r, c, c, 1),
        Axis::Rows => (c, r, 1, c),
    };
    for o in 0..outer {
        let idx = |i: usize| o * stride_outer + i * stride_inner;
        let max = (0..inner).map(|i| x[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..inner {
            let e = (x[idx(i)] - max).exp();
            out[idx(i)] = e;
            total += e;
        }
        for i in 0..inner {
            out[idx(i)] /= total;
        }
    }
    out
}
