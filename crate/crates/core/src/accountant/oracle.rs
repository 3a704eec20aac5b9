//! Brute-force sensitivity probes over every adjacent graph of a small graph.
//!
//! These are empirical lower bounds on the true one-layer sensitivity and
//! are meant to be compared against [`super::edge_sensitivity`] and
//! [`super::node_sensitivity`] on graphs of up to about eight nodes.

use crate::cgl::{cgl_forward, project_rows_in_place, CglParams};
use crate::features::FeatureMatrix;
use crate::graph::{enumerate_edge_neighbors, enumerate_node_neighbors, normalized_adjacency, Graph};
use crate::rng::{self, stream_rng, StreamRng};

const PROBE_DIM: usize = 4;

fn unit_rows(rng: &mut StreamRng, rows: usize) -> FeatureMatrix {
    let data = (0..rows * PROBE_DIM).map(|_| rng::standard_normal(rng)).collect();
    let mut x = FeatureMatrix::new(rows, PROBE_DIM, data).expect("finite draws");
    // push every row onto the unit sphere
    for i in 0..rows {
        let row = x.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    project_rows_in_place(&mut x, 1.0);
    x
}

/// Largest `‖α₁ C_L (Â − Â') X‖_F` over all edge-adjacent `G'` and `trials`
/// random feature matrices with unit-norm rows.
pub fn brute_force_edge_sensitivity(g: &Graph, p: &CglParams, trials: usize, seed: u64) -> f64 {
    let adj = normalized_adjacency(g);
    let neighbors: Vec<_> = enumerate_edge_neighbors(g).map(|h| normalized_adjacency(&h)).collect();
    let mut rng = stream_rng(rng::derive_seed(seed, rng::TAG_PROBE, 1), 0);
    let mut best: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let x = unit_rows(&mut rng, g.num_nodes());
        let ax = adj.mul(&x);
        for other in &neighbors {
            let gap = ax.frobenius_distance(&other.mul(&x)) * p.alpha1 * p.c_l;
            best = best.max(gap);
        }
    }
    best
}

/// Smallest minimum degree, over all edge-adjacent pairs `(G, G')`, of the
/// sparser graph of the pair.
pub fn edge_family_min_degree(g: &Graph) -> usize {
    let own = g.degree_stats().d_min;
    enumerate_edge_neighbors(g)
        .map(|h| {
            if h.num_edges() < g.num_edges() {
                h.degree_stats().d_min
            } else {
                own
            }
        })
        .min()
        .unwrap_or(own)
}

/// `(d_min, d_max)` over the node-adjacent family of `g`: the smallest
/// minimum degree of the smaller graph of each pair, and the largest
/// maximum degree of the larger one.
pub fn node_family_degree_stats(g: &Graph, max_added_degree: usize) -> (usize, usize) {
    let own = g.degree_stats();
    let n = g.num_nodes();
    let mut d_min = usize::MAX;
    let mut d_max = 0;
    for (i, h) in enumerate_node_neighbors(g, max_added_degree).enumerate() {
        let removal = n >= 2 && i < n;
        let (small, large) = if removal {
            (h.degree_stats(), own)
        } else {
            (own, h.degree_stats())
        };
        d_min = d_min.min(small.d_min);
        d_max = d_max.max(large.d_max);
    }
    (d_min.min(own.d_min), d_max.max(own.d_max))
}

/// Largest change of the full layer output (including the `β X^(0)` term
/// and the row of the differing node) over all node-adjacent graphs.
///
/// The shared nodes keep identical features on both sides; the smaller
/// output is padded with a zero row at the position of the extra node.
pub fn brute_force_node_sensitivity(
    g: &Graph,
    p: &CglParams,
    max_added_degree: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    let n = g.num_nodes();
    let mut rng = stream_rng(rng::derive_seed(seed, rng::TAG_PROBE, 2), 0);
    let pairs: Vec<(Graph, Graph, usize)> = enumerate_node_neighbors(g, max_added_degree)
        .enumerate()
        .map(|(i, h)| {
            if n >= 2 && i < n {
                (h, g.clone(), i)
            } else {
                (g.clone(), h, n)
            }
        })
        .collect();
    let mut best: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let x_big = unit_rows(&mut rng, n + 1);
        let x0_big = unit_rows(&mut rng, n + 1);
        for (small, large, extra) in &pairs {
            let size = large.num_nodes();
            let keep: Vec<usize> = (0..size).filter(|i| i != extra).collect();
            let x_l = x_big.select_rows(&(0..size).collect::<Vec<_>>());
            let x0_l = x0_big.select_rows(&(0..size).collect::<Vec<_>>());
            let x_s = x_l.select_rows(&keep);
            let x0_s = x0_l.select_rows(&keep);
            let out_l = cgl_forward(&normalized_adjacency(large), &x_l, &x0_l, p).expect("shapes agree");
            let out_s = cgl_forward(&normalized_adjacency(small), &x_s, &x0_s, p).expect("shapes agree");
            let mut sq = out_l.row(*extra).iter().map(|v| v * v).sum::<f64>();
            for (j, &i) in keep.iter().enumerate() {
                sq += out_l
                    .row(i)
                    .iter()
                    .zip(out_s.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            best = best.max(sq.sqrt());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::{edge_sensitivity, node_sensitivity};
    use crate::graph::build_graph;

    fn params() -> CglParams {
        CglParams::new(0.9, 0.8, 0.2, 0.1).unwrap()
    }

    #[test]
    fn edge_probe_stays_below_bound() {
        let g = build_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]).unwrap();
        let d = edge_family_min_degree(&g);
        assert_eq!(d, 1);
        let probe = brute_force_edge_sensitivity(&g, &params(), 20, 3);
        let bound = edge_sensitivity(d, 0.9, 0.8).unwrap();
        assert!(probe > 0.0 && probe <= bound, "{probe} > {bound}");
    }

    #[test]
    fn node_probe_stays_below_bound() {
        let g = build_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let (d_min, d_max) = node_family_degree_stats(&g, 2);
        assert_eq!((d_min, d_max), (1, 3));
        let p = params();
        let probe = brute_force_node_sensitivity(&g, &p, 2, 20, 5);
        let bound = node_sensitivity(d_min, d_max, 4, p.c_l, p.alpha1, p.alpha2).unwrap();
        assert!(probe > 0.0 && probe <= bound, "{probe} > {bound}");
    }
}
