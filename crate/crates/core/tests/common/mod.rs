//! Independent oracles shared by integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use let_core::autodiff::{Graph, ParamStore, Var, FD_STEP};
use let_core::lattice::{CharSeq, Dictionary, LatticeGraph, Strategy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHABET: &[char] = &['甲', '乙', '丙', '丁', 'a', 'b'];

/// Random sentence of 1..=`max_len` characters over a small alphabet so
/// dictionary words actually occur.
pub fn random_text(rng: &mut impl Rng, max_len: usize) -> String {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Up to `max_words` words of 2..=4 characters, half taken from `text` itself.
pub fn random_dictionary(rng: &mut impl Rng, text: &str, max_words: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let n = rng.gen_range(0..=max_words);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=4);
            if rng.gen_bool(0.5) && chars.len() >= len {
                let s = rng.gen_range(0..=chars.len() - len);
                chars[s..s + len].iter().collect()
            } else {
                (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
            }
        })
        .collect()
}

pub fn random_strategy(rng: &mut impl Rng) -> Strategy {
    *[Strategy::Fmm, Strategy::Bmm, Strategy::Shortest].choose(rng).unwrap()
}

/// Reachable spans computed by repeated relaxation over span adjacency,
/// without touching the lattice's own edge list.
pub struct ClosureOracle {
    pub spans: Vec<(usize, usize)>,
    pub fw: Vec<BTreeSet<usize>>,
    pub bw: Vec<BTreeSet<usize>>,
}

impl ClosureOracle {
    pub fn new(paths: &[Vec<(usize, usize)>]) -> Self {
        let spans: Vec<(usize, usize)> = paths
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let n = spans.len();
        let adjacent = |i: usize, j: usize| spans[i].1 + 1 == spans[j].0;
        let mut fw: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if adjacent(i, j) {
                        let add: Vec<usize> = fw[j].iter().copied().filter(|k| !fw[i].contains(k)).collect();
                        changed |= !add.is_empty();
                        fw[i].extend(add);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut bw: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, set) in fw.iter().enumerate() {
            for &j in set {
                bw[j].insert(i);
            }
        }
        Self { spans, fw, bw }
    }

    /// Compares against a lattice node by node, by span.
    pub fn matches(&self, lattice: &LatticeGraph) -> Result<(), String> {
        let got: Vec<(usize, usize)> = lattice.nodes().iter().map(|n| n.span()).collect();
        if got != self.spans {
            return Err(format!("nodes {got:?}, expected {:?}", self.spans));
        }
        for i in 0..self.spans.len() {
            let fw: BTreeSet<usize> = lattice.fw_reach(i).iter().copied().collect();
            let bw: BTreeSet<usize> = lattice.bw_reach(i).iter().copied().collect();
            if fw != self.fw[i] || bw != self.bw[i] {
                return Err(format!("reach of {:?} differs", self.spans[i]));
            }
        }
        Ok(())
    }
}

/// Segments with each `(strategy, words)` pair and returns the lattice with
/// the raw 1-indexed spans of every path.
pub fn build_from(text: &str, segmenters: &[(Strategy, Vec<String>)]) -> (LatticeGraph, Vec<Vec<(usize, usize)>>) {
    let seq = CharSeq::new(text);
    let dicts: Vec<(Strategy, Dictionary)> = segmenters.iter().map(|(s, w)| (*s, w.iter().collect())).collect();
    let paths: Vec<Vec<(usize, usize)>> = dicts
        .iter()
        .map(|(s, d)| {
            let_core::lattice::segment(&seq, d, *s)
                .iter()
                .map(|n| n.span())
                .collect()
        })
        .collect();
    let lattice = LatticeGraph::from_segmenters(&seq, dicts.iter().map(|(s, d)| (*s, d))).unwrap();
    (lattice, paths)
}

/// Directional derivative of `loss` along a random unit vector over every
/// trainable parameter, tape against central differences. The error is
/// relative to `max(|a|, |n|, ‖∇‖)`, the natural scale of `⟨∇, v⟩`, so a
/// near-orthogonal draw is not judged on rounding noise alone.
pub fn jvp_error(
    store: &ParamStore,
    seed: u64,
    loss: impl Fn(&mut Graph<'_>) -> Result<Var, let_core::Error>,
) -> f64 {
    let trainable: Vec<_> = store.ids().filter(|&id| store.get(id).requires_grad()).collect();
    let grads: Vec<Vec<f64>> = {
        let mut g = Graph::new(store);
        let l = loss(&mut g).unwrap();
        let grads = g.backward(l).unwrap();
        trainable
            .iter()
            .map(|&id| {
                grads
                    .params()
                    .iter()
                    .find(|(p, _)| *p == id)
                    .map_or_else(|| vec![0.0; store.get(id).numel()], |(_, v)| v.clone())
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<Vec<f64>> = grads
        .iter()
        .map(|g| g.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let norm = dir.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().flatten().for_each(|x| *x /= norm);

    let shifted = |sign: f64| {
        let mut s = store.clone();
        for (id, d) in trainable.iter().zip(&dir) {
            for (x, dx) in s.get_mut(*id).data_mut().iter_mut().zip(d) {
                *x += sign * FD_STEP * dx;
            }
        }
        let mut g = Graph::new(&s);
        let l = loss(&mut g).unwrap();
        g.scalar(l)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * FD_STEP);
    let analytic: f64 = grads.iter().flatten().zip(dir.iter().flatten()).map(|(g, v)| g * v).sum();
    let scale = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale).max(f64::MIN_POSITIVE)
}
