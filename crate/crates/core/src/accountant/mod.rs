//! Privacy accounting for K-hop perturbed contractive message passing.
//!
//! A K-hop pipeline whose layers are γ-contractive, releasing only the last
//! iterate, is `(α, α/2 · Δ²/σ² · F(K, γ))`-RDP with
//!
//! ```text
//! F(K, γ) = min{ K, (1 − γ^K)/(1 + γ^K) · (1 + γ)/(1 − γ) }
//! ```
//!
//! whereas plain composition over the hops gives `F = K`. `F` saturates at
//! `(1 + γ)/(1 − γ)`, so the noise needed for a fixed `(ε, δ)` stops growing
//! with depth. This module also holds the layer sensitivity bounds, the
//! GDP/RDP/DP conversions and the σ calibration that ties them together.

mod oracle;

pub use oracle::{
    brute_force_edge_sensitivity, brute_force_node_sensitivity, edge_family_min_degree,
    node_family_degree_stats,
};

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::normal;

/// RDP orders searched by [`calibrate_sigma`].
pub const DEFAULT_ALPHA_ORDERS: [f64; 11] =
    [1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0];

/// Bracket and relative tolerance of the σ bisection.
pub const SIGMA_SEARCH_RANGE: (f64, f64) = (1e-6, 1e6);
pub const SIGMA_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyLevel {
    Edge,
    Node,
    /// No protection: message passing runs without noise.
    None,
}

/// Which bound converts hops into privacy cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountingMode {
    #[default]
    Convergent,
    Linear,
}

/// Target guarantee for a K-hop run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub level: PrivacyLevel,
    pub k_hops: u32,
    /// Lipschitz constant of the layer (`C_L` for the contractive layer).
    pub gamma: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, level: PrivacyLevel, k_hops: u32, gamma: f64) -> Result<Self> {
        let spec = Self {
            epsilon,
            delta,
            level,
            k_hops,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return input(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return input(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return input(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        Ok(())
    }
}

/// RDP cost curve `α ↦ ε(α)` of a module trained before or after message
/// passing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RdpCost {
    #[default]
    Zero,
    /// `steps` full-batch Gaussian mechanisms with the given noise
    /// multiplier: `steps · α / (2 · noise_multiplier²)`.
    GaussianSteps { steps: u64, noise_multiplier: f64 },
    /// A cost already evaluated at the order in use.
    Fixed { epsilon: f64 },
}

impl RdpCost {
    pub fn at(&self, alpha: f64) -> f64 {
        match *self {
            RdpCost::Zero => 0.0,
            RdpCost::GaussianSteps {
                steps,
                noise_multiplier,
            } => {
                if steps == 0 {
                    0.0
                } else if noise_multiplier <= 0.0 {
                    f64::INFINITY
                } else {
                    steps as f64 * alpha / (2.0 * noise_multiplier * noise_multiplier)
                }
            }
            RdpCost::Fixed { epsilon } => epsilon,
        }
    }
}

/// RDP costs of the encoder and the classification head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModuleBudgets {
    pub dae: RdpCost,
    pub cm: RdpCost,
}

impl ModuleBudgets {
    pub fn at(&self, alpha: f64) -> f64 {
        self.dae.at(alpha) + self.cm.at(alpha)
    }
}

/// Calibrated noise for a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    /// Noise scale per hop before multiplication by the sensitivity.
    pub sigma: f64,
    pub alpha_star: f64,
    pub delta_mp: f64,
    /// `F(K, γ)` (or `K` in linear mode).
    pub factor: f64,
    /// Achieved ε; `null` in JSON when no guarantee holds.
    #[serde(with = "finite_or_null")]
    pub eps_achieved: f64,
}

impl NoisePlan {
    /// Plan for a run without privacy protection.
    pub fn disabled(factor: f64) -> Self {
        NoisePlan {
            sigma: 0.0,
            alpha_star: DEFAULT_ALPHA_ORDERS[DEFAULT_ALPHA_ORDERS.len() - 1],
            delta_mp: 0.0,
            factor,
            eps_achieved: f64::INFINITY,
        }
    }

    /// Std of the Gaussian noise injected at every hop.
    pub fn noise_std(&self) -> f64 {
        self.delta_mp * self.sigma
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return input(format!("gamma must lie in [0, 1), got {gamma}"));
    }
    Ok(())
}

/// `min{K, (1 − γ^K)/(1 + γ^K) · (1 + γ)/(1 − γ)}`.
pub fn convergent_factor(k: u32, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if k == 0 {
        return input("the number of hops must be at least 1");
    }
    if k == 1 {
        // both branches are exactly 1
        return Ok(1.0);
    }
    let g_k = gamma.powf(f64::from(k));
    let bound = (1.0 - g_k) / (1.0 + g_k) * (1.0 + gamma) / (1.0 - gamma);
    Ok(bound.min(f64::from(k)))
}

/// Hop multiplier used by `mode`.
pub fn hop_factor(mode: AccountingMode, k: u32, gamma: f64) -> Result<f64> {
    match mode {
        AccountingMode::Convergent => convergent_factor(k, gamma),
        AccountingMode::Linear => {
            if k == 0 {
                return input("the number of hops must be at least 1");
            }
            Ok(f64::from(k))
        }
    }
}

fn gaussian_rdp(delta_mp: f64, sigma: f64, alpha: f64, factor: f64) -> f64 {
    if delta_mp == 0.0 {
        return 0.0;
    }
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    0.5 * alpha * (delta_mp / sigma).powi(2) * factor
}

/// `½ · α · (Δ/σ)² · F(K, γ)`; infinite when `σ = 0` and `Δ > 0`.
pub fn rdp_epsilon_convergent(k: u32, gamma: f64, delta_mp: f64, sigma: f64, alpha: f64) -> Result<f64> {
    Ok(gaussian_rdp(delta_mp, sigma, alpha, convergent_factor(k, gamma)?))
}

/// `K · α · Δ² / (2σ²)`.
pub fn rdp_epsilon_linear(k: u32, delta_mp: f64, sigma: f64, alpha: f64) -> f64 {
    gaussian_rdp(delta_mp, sigma, alpha, f64::from(k))
}

/// `(α, ε)`-RDP implies `(ε + log(1/δ)/(α − 1), δ)`-DP.
pub fn rdp_to_dp(eps_rdp: f64, alpha: f64, delta: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return input(format!("RDP order must exceed 1, got {alpha}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return input(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(eps_rdp + (1.0 / delta).ln() / (alpha - 1.0))
}

/// μ-GDP implies `(α, ½αμ²)`-RDP.
pub fn gdp_to_rdp(mu: f64, alpha: f64) -> f64 {
    0.5 * alpha * mu * mu
}

/// Gaussian trade-off curve `G_μ(a) = Φ(Φ⁻¹(1 − a) − μ)`: the smallest
/// type-II error of any test between `N(0,1)` and `N(μ,1)` at type-I
/// error `a`.
pub fn gaussian_tradeoff(type_one: f64, mu: f64) -> f64 {
    normal::cdf(normal::quantile(1.0 - type_one) - mu)
}

/// Degree correction term of the sensitivity bounds: `f(x) = x/√(x+1) −
/// x/√(x+2)` peaks at `x = 3` over the integers, so small minimum degrees
/// use `f(3)`.
pub fn degree_correction(d_min: usize) -> f64 {
    let x = if d_min > 3 { d_min as f64 } else { 3.0 };
    x / (x + 1.0).sqrt() - x / (x + 2.0).sqrt()
}

/// Upper bound on the change of one layer's output when a single edge is
/// added or removed, for graphs with minimum degree `d_min ≥ 1`.
///
/// Only the `α₁ Â` term depends on the edge set; the mean term does not.
pub fn edge_sensitivity(d_min: usize, c_l: f64, alpha1: f64) -> Result<f64> {
    if d_min == 0 {
        return input("edge sensitivity requires minimum degree >= 1");
    }
    let d = d_min as f64;
    let bracket = 1.0 / ((d + 1.0) * (d + 2.0))
        + degree_correction(d_min) / (d + 1.0).sqrt()
        + 1.0 / ((d + 2.0).sqrt() * (d + 1.0).sqrt());
    Ok(std::f64::consts::SQRT_2 * c_l * alpha1 * bracket)
}

/// Upper bound on the change of one layer's output when a node and its
/// incident edges are added or removed.
pub fn node_sensitivity(
    d_min: usize,
    d_max: usize,
    num_nodes: usize,
    c_l: f64,
    alpha1: f64,
    alpha2: f64,
) -> Result<f64> {
    if d_min == 0 {
        return input("node sensitivity requires minimum degree >= 1");
    }
    if d_max < d_min {
        return input(format!("d_max ({d_max}) is below d_min ({d_min})"));
    }
    let (d, dmax, n) = (d_min as f64, d_max as f64, num_nodes as f64);
    let mean_term = alpha2 * c_l * 2.0 * n / (n + 1.0);
    let adj_term = alpha1
        * c_l
        * (dmax.sqrt() / ((d + 1.0) * (d + 2.0))
            + degree_correction(d_min) * dmax.sqrt() / (d + 1.0).sqrt()
            + 1.0 / (d + 2.0).sqrt());
    Ok(1.0 + mean_term + adj_term)
}

/// Total ε of encoder, head and message passing at order `alpha`.
pub fn composed_epsilon(
    spec: &PrivacySpec,
    delta_mp: f64,
    sigma: f64,
    alpha: f64,
    budgets: &ModuleBudgets,
    mode: AccountingMode,
) -> Result<f64> {
    let factor = hop_factor(mode, spec.k_hops, spec.gamma)?;
    let mp = gaussian_rdp(delta_mp, sigma, alpha, factor);
    rdp_to_dp(budgets.at(alpha) + mp, alpha, spec.delta)
}

/// Smallest σ meeting `spec.epsilon` over [`DEFAULT_ALPHA_ORDERS`].
pub fn calibrate_sigma(
    spec: &PrivacySpec,
    delta_mp: f64,
    budgets: &ModuleBudgets,
    mode: AccountingMode,
) -> Result<NoisePlan> {
    calibrate_sigma_with_orders(spec, delta_mp, budgets, mode, &DEFAULT_ALPHA_ORDERS)
}

/// Bisection (in log σ) for the smallest σ whose best composed ε over
/// `orders` is at most `spec.epsilon`. The composed ε is decreasing in σ
/// at every order, and so is its minimum over orders.
pub fn calibrate_sigma_with_orders(
    spec: &PrivacySpec,
    delta_mp: f64,
    budgets: &ModuleBudgets,
    mode: AccountingMode,
    orders: &[f64],
) -> Result<NoisePlan> {
    spec.validate()?;
    if orders.is_empty() {
        return input("at least one RDP order is required");
    }
    if let Some(a) = orders.iter().find(|&&a| !(a > 1.0) || !a.is_finite()) {
        return input(format!("RDP orders must be finite and exceed 1, got {a}"));
    }
    if !(delta_mp >= 0.0) || !delta_mp.is_finite() {
        return input(format!("sensitivity must be finite and non-negative, got {delta_mp}"));
    }
    let factor = hop_factor(mode, spec.k_hops, spec.gamma)?;

    let best_at = |sigma: f64| -> Result<(f64, f64)> {
        let mut best = (f64::INFINITY, orders[0]);
        for &alpha in orders {
            let eps = composed_epsilon(spec, delta_mp, sigma, alpha, budgets, mode)?;
            if eps < best.0 {
                best = (eps, alpha);
            }
        }
        Ok(best)
    };

    let floor = best_at(f64::INFINITY)?;
    if !(spec.epsilon > floor.0) && !(delta_mp == 0.0 && spec.epsilon >= floor.0) {
        return Err(Error::Calibration {
            target: spec.epsilon,
            floor: floor.0,
        });
    }
    if delta_mp == 0.0 {
        return Ok(NoisePlan {
            sigma: 0.0,
            alpha_star: floor.1,
            delta_mp,
            factor,
            eps_achieved: floor.0,
        });
    }

    let (mut lo, mut hi) = SIGMA_SEARCH_RANGE;
    if best_at(hi)?.0 > spec.epsilon {
        return Err(Error::Calibration {
            target: spec.epsilon,
            floor: floor.0,
        });
    }
    if best_at(lo)?.0 > spec.epsilon {
        while hi - lo > SIGMA_REL_TOL * hi {
            let mid = (lo * hi).sqrt();
            if best_at(mid)?.0 <= spec.epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let (eps, alpha_star) = best_at(hi)?;
    Ok(NoisePlan {
        sigma: hi,
        alpha_star,
        delta_mp,
        factor,
        eps_achieved: eps,
    })
}

/// One row of the depth sweep: σ needed under each accountant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTableRow {
    pub k: u32,
    pub sigma_linear: f64,
    pub sigma_convergent: f64,
}

/// σ under linear and convergent accounting for each depth in `k_values`,
/// with unit sensitivity, no module budgets and the order pinned to `alpha`.
pub fn emit_noise_table(
    epsilon: f64,
    delta: f64,
    alpha: f64,
    gamma: f64,
    k_values: &[u32],
) -> Result<Vec<NoiseTableRow>> {
    k_values
        .iter()
        .map(|&k| {
            let spec = PrivacySpec::new(epsilon, delta, PrivacyLevel::Edge, k, gamma)?;
            let budgets = ModuleBudgets::default();
            let sigma = |mode| {
                calibrate_sigma_with_orders(&spec, 1.0, &budgets, mode, &[alpha]).map(|p| p.sigma)
            };
            Ok(NoiseTableRow {
                k,
                sigma_linear: sigma(AccountingMode::Linear)?,
                sigma_convergent: sigma(AccountingMode::Convergent)?,
            })
        })
        .collect()
}

/// Float rendering for tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    /// Four significant digits.
    Significant4,
    /// Shortest representation that parses back to the same value.
    RoundTrip,
}

pub fn format_value(x: f64, format: TableFormat) -> String {
    match format {
        TableFormat::RoundTrip => format!("{x:?}"),
        TableFormat::Significant4 => {
            if x == 0.0 || !x.is_finite() {
                return format!("{x}");
            }
            let magnitude = x.abs().log10().floor() as i32;
            let decimals = (3 - magnitude).max(0) as usize;
            format!("{x:.decimals$}")
        }
    }
}

/// CSV with header `K,sigma_linear,sigma_convergent`.
pub fn noise_table_csv(rows: &[NoiseTableRow], format: TableFormat) -> String {
    let mut out = String::from("K,sigma_linear,sigma_convergent\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.k,
            format_value(r.sigma_linear, format),
            format_value(r.sigma_convergent, format)
        ));
    }
    out
}
