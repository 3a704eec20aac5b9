//! Perturbed contractive message passing.
//!
//! Each hop applies the contractive layer, adds isotropic Gaussian noise
//! scaled to the layer sensitivity and projects every row back into the
//! unit ball. Only the last iterate leaves this module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::{
    calibrate_sigma, edge_sensitivity, hop_factor, node_sensitivity, rdp_to_dp, AccountingMode,
    ModuleBudgets, NoisePlan, PrivacyLevel, PrivacySpec, DEFAULT_ALPHA_ORDERS,
};
use crate::cgl::{cgl_forward, project_rows_in_place, CglParams};
use crate::error::{input, Error, Result};
use crate::features::{l2_norm, FeatureMatrix};
use crate::graph::{normalized_adjacency, Graph, LabeledDataset, SymNormAdj};
use crate::rng::{self, stream_rng};

/// Rows of the input must lie in the unit ball up to this slack.
const ROW_NORM_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcmpConfig {
    pub cgl: CglParams,
    pub spec: PrivacySpec,
    pub k_hops: u32,
    pub seed: u64,
    #[serde(default)]
    pub mode: AccountingMode,
    /// Degree cap for node-level privacy; the graph must respect it.
    #[serde(default)]
    pub max_degree: Option<usize>,
    /// RDP cost of modules trained on the same data.
    #[serde(default)]
    pub budgets: ModuleBudgets,
}

impl PcmpConfig {
    pub fn new(cgl: CglParams, spec: PrivacySpec, seed: u64) -> Self {
        PcmpConfig {
            cgl,
            spec,
            k_hops: spec.k_hops,
            seed,
            mode: AccountingMode::Convergent,
            max_degree: None,
            budgets: ModuleBudgets::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub x_k_final: FeatureMatrix,
    pub plan: NoisePlan,
    pub per_hop_noise_std: f64,
}

impl RunArtifacts {
    /// Final embedding as CSV with round-trip float formatting.
    pub fn write_embedding_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.x_k_final.to_csv())?;
        Ok(())
    }

    /// The noise plan as a JSON object.
    pub fn write_plan_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.plan)? + "\n")?;
        Ok(())
    }
}

/// I.i.d. `N(0, std²)` entries from `rng` (no draws when `std = 0`).
pub fn sample_gaussian_matrix<R: rand::Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> FeatureMatrix {
    assert!(std >= 0.0 && std.is_finite(), "noise std must be finite and non-negative");
    if std == 0.0 {
        return FeatureMatrix::zeros(rows, cols);
    }
    let data = (0..rows * cols)
        .map(|_| std * rng::standard_normal(rng))
        .collect();
    FeatureMatrix::new(rows, cols, data).expect("finite draws")
}

/// One-layer sensitivity at protection `level`.
pub fn layer_sensitivity(
    graph: &Graph,
    cgl: &CglParams,
    level: PrivacyLevel,
    max_degree: Option<usize>,
) -> Result<f64> {
    let stats = graph.degree_stats();
    match level {
        PrivacyLevel::None => Ok(0.0),
        PrivacyLevel::Edge => {
            if stats.d_min == 0 {
                return input(
                    "edge-level privacy needs every node to have at least one neighbour \
                     (self-loops do not count); remove isolated nodes first",
                );
            }
            edge_sensitivity(stats.d_min, cgl.c_l, cgl.alpha1)
        }
        PrivacyLevel::Node => {
            if stats.d_min == 0 {
                return input(
                    "node-level privacy needs every node to have at least one neighbour \
                     (self-loops do not count); remove isolated nodes first",
                );
            }
            let d_max = match max_degree {
                Some(cap) if stats.d_max > cap => {
                    return input(format!(
                        "maximum degree {} exceeds the configured cap {cap}",
                        stats.d_max
                    ))
                }
                Some(cap) => cap,
                None => stats.d_max,
            };
            let base = node_sensitivity(
                stats.d_min,
                d_max.max(stats.d_min),
                graph.num_nodes(),
                cgl.c_l,
                cgl.alpha1,
                cgl.alpha2,
            )?;
            // the differing node's residual row β·x0 is only covered up to β = 1
            Ok(base + (cgl.beta - 1.0).max(0.0))
        }
    }
}

/// Noise plan for a run: sensitivity from the graph, σ from the accountant.
pub fn plan_noise(graph: &Graph, cfg: &PcmpConfig) -> Result<NoisePlan> {
    if cfg.k_hops != cfg.spec.k_hops {
        return input(format!(
            "k_hops ({}) differs from the privacy settings ({})",
            cfg.k_hops, cfg.spec.k_hops
        ));
    }
    cfg.spec.validate()?;
    if cfg.spec.gamma < cfg.cgl.c_l {
        return input(format!(
            "gamma ({}) is below the layer's Lipschitz constant c_l ({})",
            cfg.spec.gamma, cfg.cgl.c_l
        ));
    }
    if cfg.spec.level == PrivacyLevel::None {
        let factor = if cfg.k_hops == 0 {
            0.0
        } else {
            hop_factor(cfg.mode, cfg.k_hops, cfg.spec.gamma)?
        };
        return Ok(NoisePlan::disabled(factor));
    }
    let delta_mp = layer_sensitivity(graph, &cfg.cgl, cfg.spec.level, cfg.max_degree)?;
    if cfg.k_hops == 0 {
        return no_hop_plan(&cfg.spec, delta_mp, &cfg.budgets);
    }
    calibrate_sigma(&cfg.spec, delta_mp, &cfg.budgets, cfg.mode)
}

/// Without hops nothing graph-dependent is released; only the other
/// modules spend budget.
fn no_hop_plan(spec: &PrivacySpec, delta_mp: f64, budgets: &ModuleBudgets) -> Result<NoisePlan> {
    let mut best = (f64::INFINITY, DEFAULT_ALPHA_ORDERS[0]);
    for &alpha in &DEFAULT_ALPHA_ORDERS {
        let eps = rdp_to_dp(budgets.at(alpha), alpha, spec.delta)?;
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    if best.0 > spec.epsilon {
        return Err(Error::Calibration {
            target: spec.epsilon,
            floor: best.0,
        });
    }
    Ok(NoisePlan {
        sigma: 0.0,
        alpha_star: best.1,
        delta_mp,
        factor: 0.0,
        eps_achieved: best.0,
    })
}

/// `k_hops` perturbed layers from `x0`, with hop `k` drawing from stream
/// `k` of `seed`.
pub fn propagate(
    adj: &SymNormAdj,
    x0: &FeatureMatrix,
    cgl: &CglParams,
    k_hops: u32,
    noise_std: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut x = x0.clone();
    for k in 0..k_hops {
        x = cgl_forward(adj, &x, x0, cgl)?;
        let mut rng = stream_rng(seed, u64::from(k));
        let noise = sample_gaussian_matrix(x.rows(), x.cols(), noise_std, &mut rng);
        x.add_scaled(&noise, 1.0);
        project_rows_in_place(&mut x, 1.0);
    }
    Ok(x)
}

fn check_row_norms(x: &FeatureMatrix) -> Result<()> {
    for (i, row) in x.iter_rows().enumerate() {
        let norm = l2_norm(row);
        if norm > 1.0 + ROW_NORM_SLACK {
            return input(format!("feature row {i} has norm {norm} > 1; normalise rows first"));
        }
    }
    Ok(())
}

/// Calibrate, then run the perturbed hops on the dataset's graph.
pub fn pcmp_run(dataset: &LabeledDataset, cfg: &PcmpConfig) -> Result<RunArtifacts> {
    pcmp_run_on(&dataset.graph, &dataset.features, cfg)
}

pub fn pcmp_run_on(graph: &Graph, features: &FeatureMatrix, cfg: &PcmpConfig) -> Result<RunArtifacts> {
    if features.rows() != graph.num_nodes() {
        return input(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            graph.num_nodes()
        ));
    }
    check_row_norms(features)?;
    let plan = plan_noise(graph, cfg)?;
    let std = plan.noise_std();
    let adj = normalized_adjacency(graph);
    let x_k_final = propagate(&adj, features, &cfg.cgl, cfg.k_hops, std, cfg.seed)?;
    Ok(RunArtifacts {
        x_k_final,
        plan,
        per_hop_noise_std: std,
    })
}
