//! Undirected graphs and the symmetric-normalised adjacency.
//!
//! Graphs are stored self-loop free; the self-loop of the normalised
//! adjacency `Â = D̃^{-1/2}(A + I)D̃^{-1/2}` (with `D̃ = D + I`) is added
//! only when [`normalized_adjacency`] builds it.

mod dataset;

pub use dataset::{
    default_split, gen_chain_dataset, gen_planted_partition, load_dataset, load_dataset_with_split,
    ChainPreset, LabeledDataset, PlantedPartition,
};

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::features::FeatureMatrix;

/// Simple undirected graph on nodes `0..num_nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    /// Sorted `(u, v)` pairs with `u < v`.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbour lists (row-indexed sparse adjacency).
    neighbors: Vec<Vec<usize>>,
    dropped_self_loops: usize,
}

/// Builds a deduplicated, symmetrised, self-loop-free graph.
///
/// Self-loops in `edge_list` are dropped and counted in
/// [`Graph::dropped_self_loops`]; out-of-range ids are an input error.
pub fn build_graph(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Graph> {
    if num_nodes == 0 {
        return input("a graph needs at least one node");
    }
    let mut dropped = 0;
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(u, v) in edge_list {
        if u >= num_nodes || v >= num_nodes {
            return input(format!(
                "edge ({u}, {v}) references a node outside 0..{num_nodes}"
            ));
        }
        if u == v {
            dropped += 1;
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }
    edges.sort_unstable();
    edges.dedup();
    let mut g = Graph::from_sorted_edges(num_nodes, edges);
    g.dropped_self_loops = dropped;
    Ok(g)
}

impl Graph {
    fn from_sorted_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Graph {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Graph {
            num_nodes,
            edges,
            neighbors,
            dropped_self_loops: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Self-loops discarded while building this graph.
    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn degree_stats(&self) -> DegreeStats {
        degree_stats(self)
    }

    /// The graph with the pair `{u, v}` added if absent or removed if present.
    pub fn with_edge_toggled(&self, u: usize, v: usize) -> Graph {
        let key = (u.min(v), u.max(v));
        let mut edges = self.edges.clone();
        match edges.binary_search(&key) {
            Ok(pos) => {
                edges.remove(pos);
            }
            Err(pos) => edges.insert(pos, key),
        }
        Graph::from_sorted_edges(self.num_nodes, edges)
    }

    /// The graph with node `v` and its incident edges removed; nodes above
    /// `v` shift down by one.
    pub fn without_node(&self, v: usize) -> Graph {
        let shift = |x: usize| if x > v { x - 1 } else { x };
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| a != v && b != v)
            .map(|&(a, b)| (shift(a), shift(b)))
            .collect();
        Graph::from_sorted_edges(self.num_nodes - 1, edges)
    }

    /// The graph with a new node `num_nodes` linked to each node in `links`.
    pub fn with_added_node(&self, links: &[usize]) -> Graph {
        let new = self.num_nodes;
        let mut edges = self.edges.clone();
        edges.extend(links.iter().map(|&u| (u, new)));
        edges.sort_unstable();
        edges.dedup();
        Graph::from_sorted_edges(new + 1, edges)
    }

    /// Subgraph induced by `nodes`; node `nodes[i]` becomes node `i`.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut position = vec![usize::MAX; self.num_nodes];
        for (i, &v) in nodes.iter().enumerate() {
            position[v] = i;
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(a, b)| position[a] != usize::MAX && position[b] != usize::MAX)
            .map(|&(a, b)| {
                let (x, y) = (position[a], position[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        edges.sort_unstable();
        Graph::from_sorted_edges(nodes.len(), edges)
    }

    /// Same node set, keeping only `edges` (which must be a subset).
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Graph> {
        build_graph(self.num_nodes, edges)
    }
}

/// Minimum and maximum degree of the stored (self-loop-free) graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub d_min: usize,
    pub d_max: usize,
}

pub fn degree_stats(g: &Graph) -> DegreeStats {
    let degrees = g.neighbors.iter().map(Vec::len);
    DegreeStats {
        d_min: degrees.clone().min().unwrap_or(0),
        d_max: degrees.max().unwrap_or(0),
    }
}

/// `Â` in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SymNormAdj {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

pub fn normalized_adjacency(g: &Graph) -> SymNormAdj {
    let n = g.num_nodes;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt())
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n + 2 * g.num_edges());
    let mut values = Vec::with_capacity(n + 2 * g.num_edges());
    row_ptr.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in &g.neighbors[u] {
            if !self_done && v > u {
                col_idx.push(u);
                values.push(1.0 / (g.degree(u) + 1) as f64);
                self_done = true;
            }
            col_idx.push(v);
            values.push(inv_sqrt[u] * inv_sqrt[v]);
        }
        if !self_done {
            col_idx.push(u);
            values.push(1.0 / (g.degree(u) + 1) as f64);
        }
        row_ptr.push(col_idx.len());
    }
    SymNormAdj {
        n,
        row_ptr,
        col_idx,
        values,
    }
}

impl SymNormAdj {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let (start, end) = (self.row_ptr[u], self.row_ptr[u + 1]);
        match self.col_idx[start..end].binary_search(&v) {
            Ok(pos) => self.values[start + pos],
            Err(_) => 0.0,
        }
    }

    /// Non-zero `(column, value)` pairs of row `u`.
    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[u]..self.row_ptr[u + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (u, row) in dense.iter_mut().enumerate() {
            for (v, a) in self.row(u) {
                row[v] = a;
            }
        }
        dense
    }

    /// `Â · x`. Panics if `x` does not have one row per node.
    pub fn mul(&self, x: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(x.rows(), self.n, "row count must match node count");
        let d = x.cols();
        let mut out = FeatureMatrix::zeros(self.n, d);
        for u in 0..self.n {
            let target = out.row_mut(u);
            for (v, a) in self.row(u) {
                for (t, s) in target.iter_mut().zip(x.row(v)) {
                    *t += a * s;
                }
            }
        }
        out
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|u| self.row(u).map(|(v, a)| a * x[v]).sum())
            .collect()
    }

    /// Power-iteration estimate of the spectral norm. `Â` is symmetric, so
    /// this is its largest eigenvalue magnitude.
    pub fn spectral_norm_estimate(&self, max_iter: usize, tol: f64) -> f64 {
        // A positive start vector overlaps the positive Perron vector √(d+1).
        let mut v: Vec<f64> = (0..self.n).map(|i| 1.0 + 1e-3 * (i % 7) as f64).collect();
        let norm = crate::features::l2_norm(&v);
        v.iter_mut().for_each(|x| *x /= norm);
        let mut estimate = 0.0;
        for _ in 0..max_iter {
            let w = self.mul_vec(&v);
            let next = crate::features::l2_norm(&w);
            if next == 0.0 {
                return 0.0;
            }
            v = w.into_iter().map(|x| x / next).collect();
            let converged = (next - estimate).abs() <= tol * next.max(1.0);
            estimate = next;
            if converged {
                break;
            }
        }
        estimate
    }
}

/// Every graph at edge distance one from `g`: each unordered pair toggled
/// once, in lexicographic pair order.
pub fn enumerate_edge_neighbors(g: &Graph) -> impl Iterator<Item = Graph> + '_ {
    let n = g.num_nodes;
    (0..n).flat_map(move |u| ((u + 1)..n).map(move |v| g.with_edge_toggled(u, v)))
}

/// Node-adjacent graphs of `g`: first every single-node removal (when `g`
/// has at least two nodes), then a new node linked to every subset of
/// existing nodes of size at most `max_added_degree`.
pub fn enumerate_node_neighbors(
    g: &Graph,
    max_added_degree: usize,
) -> impl Iterator<Item = Graph> + '_ {
    let n = g.num_nodes;
    let removals = (0..if n >= 2 { n } else { 0 }).map(move |v| g.without_node(v));
    let additions = (0..=max_added_degree.min(n))
        .flat_map(move |k| Combinations::new(n, k))
        .map(move |links| g.with_added_node(&links));
    removals.chain(additions)
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}
