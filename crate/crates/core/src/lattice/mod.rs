//! Word lattices over a character sequence.
//!
//! Several segmentation paths of one sentence are merged into a DAG whose
//! nodes are words (deduplicated by character span) and whose edges join
//! words that are adjacent in the text. Each node carries its forward and
//! backward reachable sets, both including the node itself.

mod segment;

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use segment::{segment, Dictionary, Strategy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("cannot build a lattice over an empty sentence")]
    EmptyText,
    #[error("no segmentation paths given")]
    NoPaths,
    #[error("span ({start}, {end}) is outside the sentence of length {len}")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("gap before span ({start}, {end})")]
    Gap { start: usize, end: usize },
    #[error("span ({start}, {end}) overlaps the previous word")]
    Overlap { start: usize, end: usize },
    #[error("path stops at character {covered} of {len}")]
    Incomplete { covered: usize, len: usize },
    #[error("graph contains a cycle")]
    Cycle,
}

/// Sentence as Unicode scalar values, NFC-normalized on construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CharSeq(Vec<char>);

impl CharSeq {
    pub fn new(text: &str) -> Self {
        Self(text.nfc().collect())
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        Self(chars)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.0
    }

    /// Characters `[from, to)` with 0-based half-open bounds.
    pub(crate) fn substring(&self, from: usize, to: usize) -> String {
        self.0[from..to].iter().collect()
    }
}

impl fmt::Display for CharSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            f.write_char(*c)?;
        }
        Ok(())
    }
}

/// A word spanning characters `start..=end` (1-based, inclusive).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WordNode {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl WordNode {
    pub fn new(id: usize, text: &CharSeq, start: usize, end: usize) -> Self {
        Self {
            id,
            start,
            end,
            surface: text.substring(start - 1, end),
        }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeGraph {
    text: CharSeq,
    nodes: Vec<WordNode>,
    edges: Vec<(usize, usize)>,
    fw_reach: Vec<Vec<usize>>,
    bw_reach: Vec<Vec<usize>>,
}

impl LatticeGraph {
    /// Merges segmentation paths into a lattice.
    ///
    /// Nodes are the union of all path words keyed by span and sorted by
    /// `(start, end)`; node ids are positions in that order.
    pub fn build(text: &CharSeq, paths: &[Vec<WordNode>]) -> Result<Self, LatticeError> {
        if text.is_empty() {
            return Err(LatticeError::EmptyText);
        }
        if paths.is_empty() {
            return Err(LatticeError::NoPaths);
        }
        let mut spans = Vec::new();
        for path in paths {
            validate_path(text.len(), path)?;
            spans.extend(path.iter().map(WordNode::span));
        }
        spans.sort_unstable();
        spans.dedup();
        let nodes: Vec<WordNode> = spans
            .iter()
            .enumerate()
            .map(|(id, &(s, e))| WordNode::new(id, text, s, e))
            .collect();
        let mut edges = Vec::new();
        for a in &nodes {
            for b in &nodes {
                if a.end + 1 == b.start {
                    edges.push((a.id, b.id));
                }
            }
        }
        let (fw_reach, bw_reach) = reachability(nodes.len(), &edges)?;
        Ok(Self {
            text: text.clone(),
            nodes,
            edges,
            fw_reach,
            bw_reach,
        })
    }

    /// Segments `text` with every `(strategy, dictionary)` pair and merges the paths.
    pub fn from_segmenters<'d>(
        text: &CharSeq,
        segmenters: impl IntoIterator<Item = (Strategy, &'d Dictionary)>,
    ) -> Result<Self, LatticeError> {
        let paths: Vec<_> = segmenters.into_iter().map(|(s, d)| segment(text, d, s)).collect();
        Self::build(text, &paths)
    }

    pub fn text(&self) -> &CharSeq {
        &self.text
    }

    pub fn nodes(&self) -> &[WordNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `N_fw⁺(node)`: the node and everything reachable after it, ascending ids.
    pub fn fw_reach(&self, node: usize) -> &[usize] {
        &self.fw_reach[node]
    }

    /// `N_bw⁺(node)`: the node and everything that reaches it, ascending ids.
    pub fn bw_reach(&self, node: usize) -> &[usize] {
        &self.bw_reach[node]
    }

    pub fn node_by_span(&self, start: usize, end: usize) -> Option<&WordNode> {
        self.nodes
            .binary_search_by_key(&(start, end), WordNode::span)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// For each character (0-based position), the ids of nodes containing it.
    pub fn char_membership(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.text.len()];
        for n in &self.nodes {
            for members in &mut out[n.start - 1..n.end] {
                members.push(n.id);
            }
        }
        out
    }

    /// Graphviz rendering, left to right.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph lattice {\n  rankdir=LR;\n  node [shape=box];\n");
        for n in &self.nodes {
            let label = n.surface.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(out, "  n{} [label=\"{} [{}-{}]\"];", n.id, label, n.start, n.end);
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }
}

fn validate_path(len: usize, path: &[WordNode]) -> Result<(), LatticeError> {
    let mut next = 1;
    for n in path {
        if n.start < 1 || n.end < n.start || n.end > len {
            return Err(LatticeError::OutOfRange {
                start: n.start,
                end: n.end,
                len,
            });
        }
        if n.start > next {
            return Err(LatticeError::Gap {
                start: n.start,
                end: n.end,
            });
        }
        if n.start < next {
            return Err(LatticeError::Overlap {
                start: n.start,
                end: n.end,
            });
        }
        next = n.end + 1;
    }
    if next != len + 1 {
        return Err(LatticeError::Incomplete { covered: next - 1, len });
    }
    Ok(())
}

/// Per-node reachable sets, ascending ids.
pub type Reach = Vec<Vec<usize>>;

/// Forward and backward reachable sets (each including the node itself) of
/// a directed graph on `n` nodes. Fails if the graph has a cycle.
pub fn reachability(n: usize, edges: &[(usize, usize)]) -> Result<(Reach, Reach), LatticeError> {
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for &(a, b) in edges {
        succ[a].push(b);
        pred[b].push(a);
        indegree[b] += 1;
    }
    // Kahn's algorithm.
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(i) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    if order.len() != n {
        return Err(LatticeError::Cycle);
    }

    let words = n.div_ceil(64);
    let mut fw = vec![vec![0u64; words]; n];
    let mut bw = vec![vec![0u64; words]; n];
    for &i in order.iter().rev() {
        fw[i][i / 64] |= 1 << (i % 64);
        for &j in &succ[i] {
            let src = fw[j].clone();
            for (d, s) in fw[i].iter_mut().zip(src) {
                *d |= s;
            }
        }
    }
    for &i in &order {
        bw[i][i / 64] |= 1 << (i % 64);
        for &j in &pred[i] {
            let src = bw[j].clone();
            for (d, s) in bw[i].iter_mut().zip(src) {
                *d |= s;
            }
        }
    }
    let to_sets = |bits: Vec<Vec<u64>>| -> Vec<Vec<usize>> {
        bits.into_iter()
            .map(|row| (0..n).filter(|&k| row[k / 64] >> (k % 64) & 1 == 1).collect())
            .collect()
    };
    Ok((to_sets(fw), to_sets(bw)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(text: &CharSeq, spans: &[(usize, usize)]) -> Vec<WordNode> {
        spans
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| WordNode::new(i, text, s, e))
            .collect()
    }

    fn id(g: &LatticeGraph, s: usize, e: usize) -> usize {
        g.node_by_span(s, e).unwrap().id
    }

    #[test]
    fn two_paths_over_abc() {
        let text = CharSeq::new("abc");
        let g = LatticeGraph::build(&text, &[path(&text, &[(1, 2), (3, 3)]), path(&text, &[(1, 1), (2, 3)])]).unwrap();
        assert_eq!(g.len(), 4);
        let surfaces: Vec<_> = g.nodes().iter().map(|n| n.surface.as_str()).collect();
        assert_eq!(surfaces, ["a", "ab", "bc", "c"]);
        let (a, ab, bc, c) = (id(&g, 1, 1), id(&g, 1, 2), id(&g, 2, 3), id(&g, 3, 3));
        let mut edges = g.edges().to_vec();
        edges.sort();
        let mut expected = vec![(ab, c), (a, bc)];
        expected.sort();
        assert_eq!(edges, expected);
        assert_eq!(g.fw_reach(a), &[a, bc]);
        let mut bw_c = vec![c, ab];
        bw_c.sort();
        assert_eq!(g.bw_reach(c), bw_c.as_slice());
    }

    #[test]
    fn single_path_is_a_chain() {
        let text = CharSeq::new("abcd");
        let g = LatticeGraph::build(&text, &[path(&text, &[(1, 1), (2, 3), (4, 4)])]).unwrap();
        assert_eq!(g.fw_reach(0), &[0, 1, 2]);
        assert_eq!(g.bw_reach(2), &[0, 1, 2]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn duplicate_paths_collapse() {
        let text = CharSeq::new("abc");
        let p = path(&text, &[(1, 2), (3, 3)]);
        let once = LatticeGraph::build(&text, std::slice::from_ref(&p)).unwrap();
        let twice = LatticeGraph::build(&text, &[p.clone(), p]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn whole_sentence_word_is_isolated() {
        let text = CharSeq::new("abc");
        let g = LatticeGraph::build(&text, &[path(&text, &[(1, 3)]), path(&text, &[(1, 1), (2, 2), (3, 3)])]).unwrap();
        let whole = id(&g, 1, 3);
        assert_eq!(g.fw_reach(whole), &[whole]);
        assert_eq!(g.bw_reach(whole), &[whole]);
    }

    #[test]
    fn malformed_paths_name_the_span() {
        let text = CharSeq::new("abcd");
        let gap = LatticeGraph::build(&text, &[path(&text, &[(1, 1), (3, 4)])]).unwrap_err();
        assert_eq!(gap, LatticeError::Gap { start: 3, end: 4 });
        let overlap = LatticeGraph::build(&text, &[path(&text, &[(1, 2), (2, 4)])]).unwrap_err();
        assert_eq!(overlap, LatticeError::Overlap { start: 2, end: 4 });
        let short = LatticeGraph::build(&text, &[path(&text, &[(1, 2)])]).unwrap_err();
        assert_eq!(short, LatticeError::Incomplete { covered: 2, len: 4 });
        assert_eq!(
            LatticeGraph::build(&CharSeq::new(""), &[vec![]]).unwrap_err(),
            LatticeError::EmptyText
        );
    }

    #[test]
    fn cycle_is_rejected() {
        assert_eq!(reachability(3, &[(0, 1), (1, 2), (2, 0)]), Err(LatticeError::Cycle));
    }

    #[test]
    fn reachability_handles_more_than_64_nodes() {
        let n = 130;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let (fw, bw) = reachability(n, &edges).unwrap();
        assert_eq!(fw[0].len(), n);
        assert_eq!(bw[n - 1].len(), n);
        assert_eq!(fw[70], (70..n).collect::<Vec<_>>());
    }

    #[test]
    fn membership_and_dot() {
        let text = CharSeq::new("abc");
        let g = LatticeGraph::build(&text, &[path(&text, &[(1, 2), (3, 3)]), path(&text, &[(1, 1), (2, 3)])]).unwrap();
        let m = g.char_membership();
        assert_eq!(m[0], vec![id(&g, 1, 1), id(&g, 1, 2)]);
        assert_eq!(m[1].len(), 2);
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph lattice"));
        assert_eq!(dot.matches("->").count(), 2);
    }

    #[test]
    fn input_is_nfc_normalized() {
        // "e" + combining acute → single precomposed scalar.
        let s = CharSeq::new("e\u{301}");
        assert_eq!(s.chars(), &['\u{e9}']);
    }
}
