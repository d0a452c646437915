//! Multi-dimensional graph attention and attentive pooling.
//!
//! Both operators weight their inputs per feature dimension: a score vector
//! is computed for every input and normalized across inputs separately for
//! each dimension (MD-softmax), so each output coordinate is its own convex
//! combination.

use crate::autodiff::{Axis, Graph, Initializer, ParamStore, Var};
use crate::nn::{FeedForward, Linear};
use crate::{Error, Result};

/// Feature-wise softmax over a set of score vectors.
///
/// Returns a `[n, d]` matrix whose every column is non-negative and sums to 1.
pub fn md_softmax(g: &mut Graph<'_>, scores: &[Var]) -> Result<Var> {
    if scores.is_empty() {
        return Err(Error::EmptySet { op: "md_softmax" });
    }
    let stacked = g.concat(scores, Axis::Rows)?;
    Ok(g.softmax(stacked, Axis::Rows))
}

/// Parameters of one MD-GAT aggregation.
#[derive(Clone, Copy, Debug)]
pub struct MdGatParams {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w: Linear,
    /// Feature-contribution network `f_m`.
    pub f_m: FeedForward,
    pub dim: usize,
}

/// Neighbor-side projections, shared by every query against the same set.
#[derive(Clone, Copy, Debug)]
pub struct Neighbors {
    keys: Var,
    contrib: Var,
    values: Var,
}

impl MdGatParams {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w_q: Linear::without_bias(store, init, &format!("{path}.w_q"), dim, dim)?,
            w_k: Linear::without_bias(store, init, &format!("{path}.w_k"), dim, dim)?,
            w: Linear::without_bias(store, init, &format!("{path}.w"), dim, dim)?,
            f_m: FeedForward::new(store, init, &format!("{path}.f_m"), dim, dim, dim)?,
            dim,
        })
    }

    /// Projects a `[m, d]` neighbor matrix.
    pub fn prepare(&self, g: &mut Graph<'_>, neighbors: Var) -> Result<Neighbors> {
        let (_, d) = g.shape(neighbors);
        if d != self.dim {
            return Err(Error::Tensor(crate::autodiff::TensorError::Shape {
                op: "md_gat",
                lhs: vec![1, self.dim],
                rhs: vec![g.shape(neighbors).0, d],
            }));
        }
        Ok(Neighbors {
            keys: self.w_k.forward(g, neighbors)?,
            contrib: self.f_m.forward(g, neighbors, 0.0)?,
            values: self.w.forward(g, neighbors)?,
        })
    }

    /// `relu(Σ_j α_j ⊙ W h_j)` with `α_j = MD-softmax_j((W_q q)·(W_k h_j) + f_m(h_j))`.
    pub fn attend(&self, g: &mut Graph<'_>, query: Var, nb: &Neighbors) -> Result<Var> {
        let (m, d) = g.shape(nb.values);
        let q = self.w_q.forward(g, query)?;
        let qt = g.transpose(q)?;
        // pairwise score, one per neighbor, added to every feature
        let s = g.matmul(nb.keys, qt)?;
        let ones = g.filled(1, d, 1.0)?;
        let s = g.matmul(s, ones)?;
        let scores = g.add(s, nb.contrib)?;
        let alpha = g.softmax(scores, Axis::Rows);
        debug_assert_eq!(g.shape(alpha), (m, d));
        let weighted = g.mul(alpha, nb.values)?;
        let agg = g.sum(weighted, Axis::Rows);
        Ok(g.relu(agg))
    }

    /// MD-GAT of one query over a neighbor list (which should include the query's own node).
    pub fn forward(&self, g: &mut Graph<'_>, query: Var, neighbors: &[Var]) -> Result<Var> {
        if neighbors.is_empty() {
            return Err(Error::EmptySet { op: "md_gat" });
        }
        let stacked = g.concat(neighbors, Axis::Rows)?;
        let nb = self.prepare(g, stacked)?;
        self.attend(g, query, &nb)
    }
}

/// Attentive pooling: `Σ_k u_k ⊙ c_k` with `u = MD-softmax(FFN(c))`.
#[derive(Clone, Copy, Debug)]
pub struct AttPoolParams {
    pub ffn: FeedForward,
}

impl AttPoolParams {
    pub fn new(store: &mut ParamStore, init: &Initializer, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            ffn: FeedForward::new(store, init, path, dim, dim, dim)?,
        })
    }

    /// Pools the rows of a `[k, d]` matrix into `[1, d]`.
    pub fn pool_matrix(&self, g: &mut Graph<'_>, items: Var) -> Result<Var> {
        let scores = self.ffn.forward(g, items, 0.0)?;
        let u = g.softmax(scores, Axis::Rows);
        let weighted = g.mul(u, items)?;
        Ok(g.sum(weighted, Axis::Rows))
    }

    pub fn pool(&self, g: &mut Graph<'_>, items: &[Var]) -> Result<Var> {
        match items {
            [] => Err(Error::EmptySet { op: "att_pooling" }),
            _ => {
                let stacked = g.concat(items, Axis::Rows)?;
                self.pool_matrix(g, stacked)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize) -> (ParamStore, MdGatParams, AttPoolParams) {
        let mut store = ParamStore::new();
        let init = Initializer::new(11);
        let gat = MdGatParams::new(&mut store, &init, "gat", d).unwrap();
        let pool = AttPoolParams::new(&mut store, &init, "pool", d).unwrap();
        (store, gat, pool)
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn md_softmax_edge_cases() {
        let mut g = Graph::detached();
        let a = g.row(vec![3.0, -1.0, 0.0]).unwrap();
        let w = md_softmax(&mut g, &[a]).unwrap();
        assert_eq!(g.value(w), &[1.0, 1.0, 1.0]);
        let b = g.row(vec![3.0, -1.0, 0.0]).unwrap();
        let w = md_softmax(&mut g, &[a, b]).unwrap();
        assert!(g.value(w).iter().all(|v| *v == 0.5));
        assert!(matches!(md_softmax(&mut g, &[]), Err(Error::EmptySet { .. })));
    }

    #[test]
    fn md_softmax_columns_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let d = rng.gen_range(1..6);
            let mut g = Graph::detached();
            let rows: Vec<Var> = random_rows(&mut rng, n, d)
                .into_iter()
                .map(|r| g.row(r.into_iter().map(|v| v * 10.0).collect()).unwrap())
                .collect();
            let w = md_softmax(&mut g, &rows).unwrap();
            let v = g.value(w);
            for f in 0..d {
                let col: f64 = (0..n).map(|i| v[i * d + f]).sum();
                assert!((col - 1.0).abs() < 1e-12);
                assert!((0..n).all(|i| v[i * d + f] >= 0.0));
            }
        }
    }

    #[test]
    fn single_neighbor_ignores_query_and_contribution() {
        let (store, gat, _) = setup(3);
        let mut g = Graph::new(&store);
        let n = g.row(vec![0.4, -0.7, 1.1]).unwrap();
        let q1 = g.row(vec![5.0, 5.0, 5.0]).unwrap();
        let q2 = g.row(vec![-3.0, 0.0, 9.0]).unwrap();
        let a = gat.forward(&mut g, q1, &[n]).unwrap();
        let b = gat.forward(&mut g, q2, &[n]).unwrap();
        let wn = gat.w.forward(&mut g, n).unwrap();
        let expected = g.relu(wn);
        assert_eq!(g.value(a), g.value(expected));
        assert_eq!(g.value(b), g.value(expected));
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let (store, gat, pool) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = random_rows(&mut rng, 4, 4);
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = rows.iter().map(|r| g.row(r.clone()).unwrap()).collect();
        let mut rev = vars.clone();
        rev.reverse();
        let a = gat.forward(&mut g, vars[0], &vars).unwrap();
        let b = gat.forward(&mut g, vars[0], &rev).unwrap();
        for (x, y) in g.value(a).iter().zip(g.value(b)) {
            assert!((x - y).abs() < 1e-12);
        }
        let pa = pool.pool(&mut g, &vars).unwrap();
        let pb = pool.pool(&mut g, &rev).unwrap();
        for (x, y) in g.value(pa).iter().zip(g.value(pb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Straight-line evaluation of the aggregation for d = 2, two neighbors.
    #[test]
    fn hand_sized_case_matches_scalar_evaluation() {
        let mut store = ParamStore::new();
        let mk = |v: Vec<f64>, r, c| Tensor::matrix(r, c, v).unwrap().with_requires_grad(true);
        let wq = [[0.5, -0.2], [0.1, 0.3]];
        let wk = [[-0.4, 0.6], [0.2, 0.2]];
        let w = [[1.0, 0.5], [-0.5, 0.8]];
        let w1 = [[0.3, -0.1], [0.7, 0.2]];
        let b1 = [0.05, -0.3];
        let w2 = [[0.9, -0.6], [0.4, 0.1]];
        let b2 = [0.2, -0.1];
        let flat = |m: [[f64; 2]; 2]| m.iter().flatten().copied().collect::<Vec<_>>();
        let gat = MdGatParams {
            w_q: Linear {
                w: store.insert("wq", mk(flat(wq), 2, 2)).unwrap(),
                b: None,
            },
            w_k: Linear {
                w: store.insert("wk", mk(flat(wk), 2, 2)).unwrap(),
                b: None,
            },
            w: Linear {
                w: store.insert("w", mk(flat(w), 2, 2)).unwrap(),
                b: None,
            },
            f_m: FeedForward {
                hidden: Linear {
                    w: store.insert("w1", mk(flat(w1), 2, 2)).unwrap(),
                    b: Some(store.insert("b1", mk(b1.to_vec(), 1, 2)).unwrap()),
                },
                output: Linear {
                    w: store.insert("w2", mk(flat(w2), 2, 2)).unwrap(),
                    b: Some(store.insert("b2", mk(b2.to_vec(), 1, 2)).unwrap()),
                },
            },
            dim: 2,
        };
        let q = [0.6, -1.0];
        let hs = [[0.6, -1.0], [1.5, 0.25]];

        // row-vector convention: (x W)_j = Σ_i x_i W[i][j]
        let vm = |x: [f64; 2], m: [[f64; 2]; 2]| [x[0] * m[0][0] + x[1] * m[1][0], x[0] * m[0][1] + x[1] * m[1][1]];
        let qp = vm(q, wq);
        let mut score = [[0.0; 2]; 2];
        let mut value = [[0.0; 2]; 2];
        for (j, h) in hs.iter().enumerate() {
            let kp = vm(*h, wk);
            let pair = qp[0] * kp[0] + qp[1] * kp[1];
            let hid = vm(*h, w1);
            let hid = [(hid[0] + b1[0]).max(0.0), (hid[1] + b1[1]).max(0.0)];
            let fm = vm(hid, w2);
            for f in 0..2 {
                score[j][f] = pair + fm[f] + b2[f];
            }
            value[j] = vm(*h, w);
        }
        let mut expected = [0.0; 2];
        for f in 0..2 {
            let z: f64 = score.iter().map(|s| s[f].exp()).sum();
            let agg: f64 = (0..2).map(|j| score[j][f].exp() / z * value[j][f]).sum();
            expected[f] = agg.max(0.0);
        }

        let mut g = Graph::new(&store);
        let qv = g.row(q.to_vec()).unwrap();
        let nb: Vec<Var> = hs.iter().map(|h| g.row(h.to_vec()).unwrap()).collect();
        let out = gat.forward(&mut g, qv, &nb).unwrap();
        for (a, b) in g.value(out).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pooling_singletons_and_duplicates_are_exact() {
        let (store, _, pool) = setup(3);
        let mut g = Graph::new(&store);
        let x = g.row(vec![0.3, -2.0, 7.5]).unwrap();
        let single = pool.pool(&mut g, &[x]).unwrap();
        assert_eq!(g.value(single), g.value(x));
        let dup = pool.pool(&mut g, &[x, x]).unwrap();
        for (a, b) in g.value(dup).iter().zip(g.value(x)) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(pool.pool(&mut g, &[]), Err(Error::EmptySet { .. })));
    }

    #[test]
    fn pooling_stays_inside_the_envelope() {
        let (store, _, pool) = setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let k = rng.gen_range(1..7);
            let rows = random_rows(&mut rng, k, 5);
            let mut g = Graph::new(&store);
            let vars: Vec<Var> = rows.iter().map(|r| g.row(r.clone()).unwrap()).collect();
            let out = pool.pool(&mut g, &vars).unwrap();
            for (f, v) in g.value(out).iter().enumerate() {
                let lo = rows.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn zero_contribution_reduces_to_scalar_attention() {
        // With f_m ≡ 0 every feature shares the scalar softmax weight.
        let (mut store, gat, _) = setup(3);
        for id in [gat.f_m.output.w, gat.f_m.output.b.unwrap()] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&store);
        let rows = [vec![0.2, 0.9, -0.4], vec![-1.0, 0.3, 0.8], vec![0.5, 0.5, 0.5]];
        let nb: Vec<Var> = rows.iter().map(|r| g.row(r.clone()).unwrap()).collect();
        let out = gat.forward(&mut g, nb[1], &nb).unwrap();

        let wq = store.get(gat.w_q.w);
        let wk = store.get(gat.w_k.w);
        let w = store.get(gat.w.w);
        let vm =
            |x: &[f64], m: &Tensor| -> Vec<f64> { (0..3).map(|j| (0..3).map(|i| x[i] * m.at(i, j)).sum()).collect() };
        let qp = vm(&rows[1], wq);
        let s: Vec<f64> = rows
            .iter()
            .map(|h| vm(h, wk).iter().zip(&qp).map(|(a, b)| a * b).sum())
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        let mut expected = vec![0.0; 3];
        for (j, h) in rows.iter().enumerate() {
            let v = vm(h, w);
            for f in 0..3 {
                expected[f] += s[j].exp() / z * v[f];
            }
        }
        for (a, b) in g.value(out).iter().zip(expected) {
            assert!((a - b.max(0.0)).abs() < 1e-12);
        }
    }
}
