//! The contractive graph layer
//!
//! `X^(k+1) = C_L · (α₁ · Â X^(k) + α₂ · Mean(X^(k))) + β · X^(0)`
//!
//! The layer has no trainable weights. With `0 ≤ C_L < 1` and `α₁ + α₂ = 1`
//! it is a `C_L`-contraction in `X^(k)` under the Frobenius norm, because
//! both `Â` and the mean operator have spectral norm at most one.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::features::{l2_norm, FeatureMatrix};
use crate::graph::SymNormAdj;
use crate::rng::{self, stream_rng};

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct CglParams {
    pub c_l: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
}

#[derive(Deserialize)]
struct RawParams {
    c_l: f64,
    alpha1: f64,
    alpha2: f64,
    beta: f64,
}

impl TryFrom<RawParams> for CglParams {
    type Error = crate::Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        CglParams::new(raw.c_l, raw.alpha1, raw.alpha2, raw.beta)
    }
}

impl CglParams {
    pub fn new(c_l: f64, alpha1: f64, alpha2: f64, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&c_l) {
            return input(format!("c_l must lie in [0, 1), got {c_l}"));
        }
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && beta >= 0.0) || !beta.is_finite() {
            return input("alpha1, alpha2 and beta must be finite and non-negative");
        }
        if (alpha1 + alpha2 - 1.0).abs() > MIX_TOLERANCE {
            return input(format!(
                "alpha1 + alpha2 must equal 1, got {}",
                alpha1 + alpha2
            ));
        }
        Ok(Self {
            c_l,
            alpha1,
            alpha2,
            beta,
        })
    }
}

/// Every output row is the column-wise mean of the input rows.
pub fn mean_aggregate(x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (n, d) = x.shape();
    if n == 0 {
        return input("mean of an empty feature matrix");
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = FeatureMatrix::zeros(n, d);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(&mean);
    }
    Ok(out)
}

/// One application of the layer.
pub fn cgl_forward(
    adj: &SymNormAdj,
    x_k: &FeatureMatrix,
    x_0: &FeatureMatrix,
    p: &CglParams,
) -> Result<FeatureMatrix> {
    if x_k.rows() != adj.num_nodes() || x_k.shape() != x_0.shape() {
        return input(format!(
            "shape mismatch: adjacency {n}×{n}, X^(k) {:?}, X^(0) {:?}",
            x_k.shape(),
            x_0.shape(),
            n = adj.num_nodes()
        ));
    }
    let mut out = adj.mul(x_k).scaled(p.c_l * p.alpha1);
    out.add_scaled(&mean_aggregate(x_k)?, p.c_l * p.alpha2);
    out.add_scaled(x_0, p.beta);
    Ok(out)
}

/// Scales every row with norm above `radius` back onto the sphere of that
/// radius; other rows are unchanged.
pub fn project_rows(x: &FeatureMatrix, radius: f64) -> FeatureMatrix {
    let mut out = x.clone();
    project_rows_in_place(&mut out, radius);
    out
}

pub fn project_rows_in_place(x: &mut FeatureMatrix, radius: f64) {
    assert!(radius > 0.0, "projection radius must be positive");
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        let norm = l2_norm(row);
        if norm > radius {
            let scale = radius / norm;
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Largest observed `‖CGL(X) − CGL(Y)‖_F / ‖X − Y‖_F` over `trials` random
/// Gaussian pairs, with the `β·X^(0)` input shared by both sides.
pub fn empirical_lipschitz(adj: &SymNormAdj, p: &CglParams, trials: usize, seed: u64) -> f64 {
    const DIM: usize = 3;
    let n = adj.num_nodes();
    let mut rng = stream_rng(rng::derive_seed(seed, rng::TAG_PROBE, 0), 0);
    let draw = |rng: &mut rng::StreamRng| {
        let data = (0..n * DIM).map(|_| rng::standard_normal(rng)).collect();
        FeatureMatrix::new(n, DIM, data).expect("finite draws")
    };
    let x0 = draw(&mut rng);
    let mut best: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let (x, y) = loop {
            let (x, y) = (draw(&mut rng), draw(&mut rng));
            if x.frobenius_distance(&y) > 0.0 {
                break (x, y);
            }
        };
        let fx = cgl_forward(adj, &x, &x0, p).expect("shapes agree");
        let fy = cgl_forward(adj, &y, &x0, p).expect("shapes agree");
        best = best.max(fx.frobenius_distance(&fy) / x.frobenius_distance(&y));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalized_adjacency};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(CglParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(CglParams::new(0.5, 0.7, 0.4, 0.0).is_err());
        assert!(CglParams::new(0.5, 0.7, 0.3 + 5e-10, 0.0).is_ok());
        assert!(CglParams::new(0.5, -0.1, 1.1, 0.0).is_err());
        let bad: std::result::Result<CglParams, _> =
            serde_json::from_str(r#"{"c_l":0.5,"alpha1":0.2,"alpha2":0.2,"beta":0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn mean_examples() {
        let x = m(&[&[1.0, 2.0], &[1.0, 2.0]]);
        assert_eq!(mean_aggregate(&x).unwrap(), x);
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(mean_aggregate(&x).unwrap(), m(&[&[0.5, 0.5], &[0.5, 0.5]]));
        let x = m(&[&[3.0, -1.0]]);
        assert_eq!(mean_aggregate(&x).unwrap(), x);
        assert!(mean_aggregate(&FeatureMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn zero_contraction_leaves_residual_only() {
        let adj = normalized_adjacency(&build_graph(3, &[(0, 1), (1, 2)]).unwrap());
        let p = CglParams::new(0.0, 0.6, 0.4, 0.7).unwrap();
        let xk = m(&[&[1.0, 2.0], &[3.0, -4.0], &[0.5, 0.5]]);
        let x0 = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        assert_eq!(cgl_forward(&adj, &xk, &x0, &p).unwrap(), x0.scaled(0.7));
    }

    #[test]
    fn single_node_scales_by_contraction() {
        let adj = normalized_adjacency(&build_graph(1, &[]).unwrap());
        let p = CglParams::new(0.7, 1.0, 0.0, 0.0).unwrap();
        let xk = m(&[&[2.0, -1.0]]);
        let out = cgl_forward(&adj, &xk, &FeatureMatrix::zeros(1, 2), &p).unwrap();
        assert!(out.frobenius_distance(&xk.scaled(0.7)) < 1e-15);
    }

    #[test]
    fn two_node_edge_example() {
        let adj = normalized_adjacency(&build_graph(2, &[(0, 1)]).unwrap());
        let p = CglParams::new(0.5, 1.0, 0.0, 0.0).unwrap();
        let xk = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let out = cgl_forward(&adj, &xk, &FeatureMatrix::zeros(2, 2), &p).unwrap();
        assert!(out.frobenius_distance(&m(&[&[0.25, 0.0], &[0.25, 0.0]])) < 1e-15);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let adj = normalized_adjacency(&build_graph(2, &[(0, 1)]).unwrap());
        let p = CglParams::new(0.5, 1.0, 0.0, 0.0).unwrap();
        let bad = FeatureMatrix::zeros(3, 2);
        assert!(cgl_forward(&adj, &bad, &bad, &p).is_err());
        let ok = FeatureMatrix::zeros(2, 2);
        assert!(cgl_forward(&adj, &ok, &FeatureMatrix::zeros(2, 3), &p).is_err());
    }

    #[test]
    fn projection_examples() {
        let x = m(&[&[0.3, 0.4], &[3.0, 4.0], &[0.0, 0.0]]);
        let out = project_rows(&x, 1.0);
        assert_eq!(out.row(0), &[0.3, 0.4]);
        assert!((out.get(1, 0) - 0.6).abs() < 1e-15 && (out.get(1, 1) - 0.8).abs() < 1e-15);
        assert_eq!(out.row(2), &[0.0, 0.0]);
        let out = project_rows(&m(&[&[3.0, 4.0]]), 2.0);
        assert!((l2_norm(out.row(0)) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_probe_examples() {
        let adj = normalized_adjacency(&build_graph(4, &[(0, 1), (1, 2), (2, 3)]).unwrap());
        let p = CglParams::new(0.0, 0.5, 0.5, 1.0).unwrap();
        assert_eq!(empirical_lipschitz(&adj, &p, 10, 1), 0.0);

        let p = CglParams::new(0.8, 0.6, 0.4, 0.3).unwrap();
        let l = empirical_lipschitz(&adj, &p, 50, 2);
        assert!(l > 0.0 && l <= 0.8 + 1e-9, "{l}");

        let single = normalized_adjacency(&build_graph(1, &[]).unwrap());
        let p = CglParams::new(0.7, 1.0, 0.0, 0.0).unwrap();
        assert!((empirical_lipschitz(&single, &p, 5, 3) - 0.7).abs() < 1e-12);
    }

    fn arb_case() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>, Vec<f64>, f64, f64)> {
        (1usize..10).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n), 0..20),
                proptest::collection::vec(-3.0f64..3.0, n * 2),
                proptest::collection::vec(-3.0f64..3.0, n * 2),
                -2.0f64..2.0,
                -2.0f64..2.0,
            )
        })
    }

    proptest! {
        #[test]
        fn linear_when_residual_is_off((n, edges, a, b, s, t) in arb_case(), c_l in 0.0f64..0.99, alpha1 in 0.0f64..1.0) {
            let adj = normalized_adjacency(&build_graph(n, &edges).unwrap());
            let p = CglParams::new(c_l, alpha1, 1.0 - alpha1, 0.0).unwrap();
            let x = FeatureMatrix::new(n, 2, a).unwrap();
            let y = FeatureMatrix::new(n, 2, b).unwrap();
            let zero = FeatureMatrix::zeros(n, 2);
            let mut combo = x.scaled(s);
            combo.add_scaled(&y, t);
            let lhs = cgl_forward(&adj, &combo, &zero, &p).unwrap();
            let mut rhs = cgl_forward(&adj, &x, &zero, &p).unwrap().scaled(s);
            rhs.add_scaled(&cgl_forward(&adj, &y, &zero, &p).unwrap(), t);
            prop_assert!(lhs.frobenius_distance(&rhs) <= 1e-9);
        }

        #[test]
        fn projection_idempotent_and_non_expansive((n, _e, a, b, _s, _t) in arb_case()) {
            let x = FeatureMatrix::new(n, 2, a).unwrap();
            let y = FeatureMatrix::new(n, 2, b).unwrap();
            let px = project_rows(&x, 1.0);
            prop_assert!(project_rows(&px, 1.0).frobenius_distance(&px) <= 1e-12);
            let py = project_rows(&y, 1.0);
            prop_assert!(px.frobenius_distance(&py) <= x.frobenius_distance(&y) + 1e-12);
            for row in px.iter_rows() {
                prop_assert!(l2_norm(row) <= 1.0 + 1e-12);
            }
        }
    }
}
