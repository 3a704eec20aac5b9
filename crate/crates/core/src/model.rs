//! Classification head and optional feature encoder.
//!
//! The head is a small tanh MLP over the concatenation `[X^(0) ‖ X^(K)]` of
//! each node's raw and propagated features. Training is full-batch gradient
//! descent on the mean cross-entropy, optionally with per-example clipping
//! and Gaussian noise (DP-SGD without subsampling).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::RdpCost;
use crate::cgl::project_rows_in_place;
use crate::error::{input, Error, Result};
use crate::features::{l2_norm, FeatureMatrix};
use crate::rng::{self, derive_seed, stream_rng};

/// Step for central differences in [`check_gradient`].
const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative gradient error.
const FD_REL_FLOOR: f64 = 1e-3;

/// Per-example clipping and noise for DP training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// `null` in JSON means no clipping.
    #[serde(with = "finite_or_null")]
    pub clip_norm: f64,
    pub noise_mult: f64,
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

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub learning_rate: f64,
    /// Width of the single hidden layer; 0 gives a linear head.
    pub hidden_units: usize,
    #[serde(default)]
    pub dp: Option<DpConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.5,
            hidden_units: 16,
            dp: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return input(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if let Some(dp) = self.dp {
            if !(dp.clip_norm > 0.0) {
                return input(format!("clip norm must be positive, got {}", dp.clip_norm));
            }
            if !(dp.noise_mult >= 0.0) || !dp.noise_mult.is_finite() {
                return input(format!("noise multiplier must be finite and non-negative, got {}", dp.noise_mult));
            }
            if dp.noise_mult > 0.0 && dp.clip_norm.is_infinite() {
                return input("noise with an unbounded clip norm has infinite scale");
            }
        }
        Ok(())
    }

    /// RDP cost of training with this configuration.
    pub fn rdp_cost(&self) -> RdpCost {
        match self.dp {
            None => RdpCost::Zero,
            Some(dp) => RdpCost::GaussianSteps {
                steps: self.epochs,
                noise_multiplier: dp.noise_mult,
            },
        }
    }
}

/// Fully connected network with tanh between layers and logits out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct MlpHead {
    sizes: Vec<usize>,
    /// Per layer: row-major `out × in` weights, then `out` biases.
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<usize>,
    activation: String,
    layers: Vec<LayerWeights>,
}

#[derive(Serialize, Deserialize)]
struct LayerWeights {
    /// Row-major `out × in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<MlpHead> for Checkpoint {
    fn from(head: MlpHead) -> Self {
        let layers = (0..head.num_layers())
            .map(|l| {
                let (w, b) = head.layer(l);
                LayerWeights {
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        Checkpoint {
            layer_sizes: head.sizes,
            activation: "tanh".into(),
            layers,
        }
    }
}

impl TryFrom<Checkpoint> for MlpHead {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.activation != "tanh" {
            return input(format!("unsupported activation {:?}", c.activation));
        }
        let mut head = MlpHead::zeros(&c.layer_sizes)?;
        if c.layers.len() != head.num_layers() {
            return input("checkpoint layer count does not match its sizes");
        }
        let mut params = Vec::with_capacity(head.params.len());
        for (l, layer) in c.layers.into_iter().enumerate() {
            let (fan_in, fan_out) = (head.sizes[l], head.sizes[l + 1]);
            if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
                return input(format!("checkpoint layer {l} has the wrong shape"));
            }
            params.extend(layer.weights);
            params.extend(layer.bias);
        }
        if params.iter().any(|v| !v.is_finite()) {
            return input("checkpoint contains non-finite parameters");
        }
        head.params = params;
        Ok(head)
    }
}

impl MlpHead {
    /// All-zero parameters; predicts the uniform distribution.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return input(format!("layer sizes must have at least two positive entries, got {sizes:?}"));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(MlpHead {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut head = Self::zeros(sizes)?;
        let mut rng = stream_rng(derive_seed(seed, rng::TAG_HEAD_INIT, 0), 0);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for p in &mut head.params[offset..offset + w[0] * w[1]] {
                *p = rng.random_range(-limit..limit);
            }
            offset += w[0] * w[1] + w[1];
        }
        Ok(head)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.layer_offset(l);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[start..start + fan_in * fan_out];
        let b = &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
        (w, b)
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let mut acts = vec![x.to_vec()];
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let prev = &acts[l];
            let fan_in = prev.len();
            let last = l + 1 == self.num_layers();
            let out = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let z = bias + w[o * fan_in..(o + 1) * fan_in].iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    /// Class probabilities for one input row.
    pub fn predict_input(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Cross-entropy of one example and its gradient.
    fn example_gradient(&self, x: &[f64], label: usize) -> (f64, Vec<f64>) {
        let acts = self.forward_all(x);
        let probs = softmax(&acts[acts.len() - 1]);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let mut grad = vec![0.0; self.params.len()];
        // dL/dz for the logits
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;
        for l in (0..self.num_layers()).rev() {
            let start = self.layer_offset(l);
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    grad[start + o * fan_in + i] = delta[o] * prev[i];
                }
                grad[start + fan_in * fan_out + o] = delta[o];
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        back * (1.0 - prev[i] * prev[i])
                    })
                    .collect();
            }
        }
        (loss, grad)
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[(Vec<f64>, usize)]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|(x, y)| -self.predict_input(x)[*y].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / batch.len() as f64
    }

    /// Gradient of the mean cross-entropy over `batch`.
    pub fn batch_gradient(&self, batch: &[(Vec<f64>, usize)]) -> Vec<f64> {
        let mut sum = vec![0.0; self.params.len()];
        for (x, y) in batch {
            let (_, g) = self.example_gradient(x, *y);
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
        let n = batch.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        sum
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn concat_row(x0: &FeatureMatrix, xk: &FeatureMatrix, i: usize) -> Vec<f64> {
    let mut row = x0.row(i).to_vec();
    row.extend_from_slice(xk.row(i));
    row
}

/// Class probabilities of one node from its raw and propagated rows.
pub fn predict_proba(head: &MlpHead, x0_row: &[f64], xk_row: &[f64]) -> Vec<f64> {
    let mut row = x0_row.to_vec();
    row.extend_from_slice(xk_row);
    head.predict_input(&row)
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

/// Fraction of `mask` nodes whose most likely class is their label.
pub fn evaluate(
    head: &MlpHead,
    x0: &FeatureMatrix,
    xk: &FeatureMatrix,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<f64> {
    if mask.is_empty() {
        return input("cannot evaluate on an empty mask");
    }
    let mut correct = 0usize;
    for &i in mask {
        let label = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Input(format!("node {i} has no label")))?;
        if argmax(&predict_proba(head, x0.row(i), xk.row(i))) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// A trained head with its privacy cost and training curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedHead {
    pub head: MlpHead,
    pub rdp_cost: RdpCost,
    /// Mean training loss before each epoch's update.
    pub losses: Vec<f64>,
}

fn training_batch(
    inputs: impl Fn(usize) -> Vec<f64>,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<Vec<(Vec<f64>, usize)>> {
    if mask.is_empty() {
        return input("no training nodes");
    }
    mask.iter()
        .map(|&i| {
            let y = labels
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Input(format!("training node {i} has no label")))?;
            Ok((inputs(i), y))
        })
        .collect()
}

/// Gradient descent on `batch` from `head`, returning the loss curve.
fn fit(head: &mut MlpHead, batch: &[(Vec<f64>, usize)], cfg: &TrainConfig, seed: u64) -> Vec<f64> {
    let n = batch.len() as f64;
    let mut noise_rng = stream_rng(derive_seed(seed, rng::TAG_DPSGD, 0), 0);
    let mut losses = Vec::with_capacity(cfg.epochs as usize);
    for _ in 0..cfg.epochs {
        let mut sum = vec![0.0; head.params.len()];
        let mut loss = 0.0;
        for (x, y) in batch {
            let (l, mut g) = head.example_gradient(x, *y);
            loss += l;
            if let Some(dp) = cfg.dp {
                let norm = l2_norm(&g);
                if norm > dp.clip_norm {
                    let scale = dp.clip_norm / norm;
                    g.iter_mut().for_each(|v| *v *= scale);
                }
                assert!(
                    l2_norm(&g) <= dp.clip_norm * (1.0 + 1e-9),
                    "clipped gradient exceeds the clip norm"
                );
            }
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
        if let Some(dp) = cfg.dp {
            let std = dp.clip_norm * dp.noise_mult;
            if std > 0.0 {
                for s in sum.iter_mut() {
                    *s += std * rng::standard_normal(&mut noise_rng);
                }
            }
        }
        losses.push(loss / n);
        for (p, s) in head.params.iter_mut().zip(&sum) {
            *p -= cfg.learning_rate * s / n;
        }
    }
    losses
}

/// Trains a head on `[x0 ‖ xk]` rows of the `train_mask` nodes.
pub fn train_head(
    x0: &FeatureMatrix,
    xk: &FeatureMatrix,
    labels: &[Option<usize>],
    train_mask: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedHead> {
    cfg.validate()?;
    if x0.rows() != xk.rows() || x0.rows() != labels.len() {
        return input("feature matrices and labels disagree on the node count");
    }
    if num_classes == 0 {
        return input("at least one class is required");
    }
    let batch = training_batch(|i| concat_row(x0, xk, i), labels, train_mask)?;
    if let Some((_, y)) = batch.iter().find(|(_, y)| *y >= num_classes) {
        return input(format!("label {y} out of range for {num_classes} classes"));
    }
    let width = x0.cols() + xk.cols();
    let sizes = if cfg.hidden_units == 0 {
        vec![width, num_classes]
    } else {
        vec![width, cfg.hidden_units, num_classes]
    };
    let mut head = MlpHead::init(&sizes, seed)?;
    let losses = fit(&mut head, &batch, cfg, seed);
    Ok(TrainedHead {
        head,
        rdp_cost: cfg.rdp_cost(),
        losses,
    })
}

/// Compares `analytic` with central differences of the mean loss.
pub fn check_gradient(head: &MlpHead, batch: &[(Vec<f64>, usize)], analytic: &[f64], tol: f64) -> bool {
    if analytic.len() != head.params.len() {
        return false;
    }
    let mut probe = head.clone();
    for (j, &a) in analytic.iter().enumerate() {
        let orig = probe.params[j];
        probe.params[j] = orig + FD_STEP;
        let up = probe.loss(batch);
        probe.params[j] = orig - FD_STEP;
        let down = probe.loss(batch);
        probe.params[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs()).max(FD_REL_FLOOR);
        if (a - numeric).abs() / scale > tol {
            return false;
        }
    }
    true
}

/// Backpropagation agrees with finite differences on `batch`.
pub fn grad_check(head: &MlpHead, batch: &[(Vec<f64>, usize)], tol: f64) -> bool {
    check_gradient(head, batch, &head.batch_gradient(batch), tol)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the encoded features.
    pub dim: usize,
    pub epochs: u64,
    pub learning_rate: f64,
    #[serde(default)]
    pub dp: Option<DpConfig>,
}

/// Affine map `x ↦ Wx + b` with unit-norm projected output, taken from the
/// first layer of a supervised tanh network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim × input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearEncoder {
    pub fn encode(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols() != self.input_dim {
            return input(format!("encoder expects {} columns, got {}", self.input_dim, x.cols()));
        }
        let mut data = Vec::with_capacity(x.rows() * self.output_dim);
        for row in x.iter_rows() {
            for o in 0..self.output_dim {
                let w = &self.weights[o * self.input_dim..(o + 1) * self.input_dim];
                data.push(self.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let mut out = FeatureMatrix::new(x.rows(), self.output_dim, data)?;
        project_rows_in_place(&mut out, 1.0);
        Ok(out)
    }
}

/// Trains a `[d, dim, C]` network on the features alone and keeps its
/// first layer.
pub fn train_encoder(
    x0: &FeatureMatrix,
    labels: &[Option<usize>],
    train_mask: &[usize],
    num_classes: usize,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(LinearEncoder, RdpCost)> {
    if cfg.dim == 0 {
        return input("encoder width must be positive");
    }
    let as_train = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        hidden_units: cfg.dim,
        dp: cfg.dp,
    };
    as_train.validate()?;
    let batch = training_batch(|i| x0.row(i).to_vec(), labels, train_mask)?;
    let seed = derive_seed(seed, rng::TAG_ENCODER, 0);
    let mut net = MlpHead::init(&[x0.cols(), cfg.dim, num_classes.max(1)], seed)?;
    fit(&mut net, &batch, &as_train, seed);
    let (w, b) = net.layer(0);
    Ok((
        LinearEncoder {
            input_dim: x0.cols(),
            output_dim: cfg.dim,
            weights: w.to_vec(),
            bias: b.to_vec(),
        },
        as_train.rdp_cost(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> (FeatureMatrix, FeatureMatrix, Vec<Option<usize>>) {
        let x0 = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]]).unwrap();
        let xk = FeatureMatrix::zeros(4, 2);
        (x0, xk, vec![Some(0), Some(0), Some(1), Some(1)])
    }

    fn batch(seed: u64, n: usize, d: usize, c: usize) -> Vec<(Vec<f64>, usize)> {
        let mut rng = stream_rng(seed, 99);
        (0..n)
            .map(|i| ((0..d).map(|_| rng::standard_normal(&mut rng)).collect(), i % c))
            .collect()
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x0, xk, y) = toy();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.5,
            hidden_units: 8,
            dp: None,
        };
        let t = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &cfg, 1).unwrap();
        assert_eq!(evaluate(&t.head, &x0, &xk, &y, &[0, 1, 2, 3]).unwrap(), 1.0);
        assert!(t.losses.last().unwrap() < &t.losses[0]);
        assert_eq!(t.rdp_cost, RdpCost::Zero);
    }

    #[test]
    fn degenerate_dp_matches_plain_training() {
        let (x0, xk, y) = toy();
        let plain = TrainConfig {
            epochs: 50,
            learning_rate: 0.3,
            hidden_units: 4,
            dp: None,
        };
        let dp = TrainConfig {
            dp: Some(DpConfig {
                clip_norm: f64::INFINITY,
                noise_mult: 0.0,
            }),
            ..plain
        };
        let a = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &plain, 4).unwrap();
        let b = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &dp, 4).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn dp_cost_is_step_composition() {
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.1,
            hidden_units: 0,
            dp: Some(DpConfig {
                clip_norm: 1.0,
                noise_mult: 2.0,
            }),
        };
        assert_eq!(cfg.rdp_cost().at(5.0), 30.0 * 5.0 / (2.0 * 4.0));
        let (x0, xk, y) = toy();
        let t = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &cfg, 2).unwrap();
        assert_eq!(t.rdp_cost, cfg.rdp_cost());
    }

    #[test]
    fn rejects_bad_configs() {
        let (x0, xk, y) = toy();
        let mut cfg = TrainConfig::default();
        assert!(train_head(&x0, &xk, &y, &[], 2, &cfg, 0).is_err());
        cfg.learning_rate = 0.0;
        assert!(train_head(&x0, &xk, &y, &[0], 2, &cfg, 0).is_err());
        cfg.learning_rate = 0.1;
        cfg.dp = Some(DpConfig {
            clip_norm: f64::INFINITY,
            noise_mult: 1.0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = MlpHead::zeros(&[4, 3, 5]).unwrap();
        let p = predict_proba(&head, &[1.0, 2.0], &[3.0, 4.0]);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let head = MlpHead::init(&[6, 5, 4], 3).unwrap();
        for (x, _) in batch(1, 100, 6, 4) {
            let p = head.predict_input(&x.iter().map(|v| v * 10.0).collect::<Vec<_>>());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn evaluate_matches_argmax_and_complements() {
        let (x0, xk, y) = toy();
        let t = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &TrainConfig::default(), 5).unwrap();
        let acc = evaluate(&t.head, &x0, &xk, &y, &[0, 1, 2, 3]).unwrap();
        let flipped: Vec<_> = y.iter().map(|l| l.map(|c| 1 - c)).collect();
        let acc_flipped = evaluate(&t.head, &x0, &xk, &flipped, &[0, 1, 2, 3]).unwrap();
        assert_eq!(acc + acc_flipped, 1.0);
        assert!(evaluate(&t.head, &x0, &xk, &y, &[]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let head = MlpHead::init(&[3, 5, 3], 8).unwrap();
        let b = batch(2, 4, 3, 3);
        assert!(grad_check(&head, &b, 1e-5));
        assert!(grad_check(&head, &b, 1e-2));
        let linear = MlpHead::init(&[3, 2], 8).unwrap();
        assert!(grad_check(&linear, &b.iter().map(|(x, y)| (x.clone(), y % 2)).collect::<Vec<_>>(), 1e-5));
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let head = MlpHead::init(&[3, 5, 3], 8).unwrap();
        let b = batch(2, 4, 3, 3);
        let mut g = head.batch_gradient(&b);
        g[7] += 0.05;
        assert!(!check_gradient(&head, &b, &g, 1e-5));
    }

    #[test]
    fn checkpoint_round_trip() {
        let head = MlpHead::init(&[4, 3, 2], 6).unwrap();
        let json = serde_json::to_string(&head).unwrap();
        assert!(json.contains("\"layer_sizes\":[4,3,2]"));
        let back: MlpHead = serde_json::from_str(&json).unwrap();
        assert_eq!(back, head);
        assert!(serde_json::from_str::<MlpHead>(r#"{"layer_sizes":[2,2],"activation":"relu","layers":[]}"#).is_err());
    }

    #[test]
    fn encoder_output_is_unit_bounded() {
        let (x0, _, y) = toy();
        let cfg = EncoderConfig {
            dim: 3,
            epochs: 20,
            learning_rate: 0.2,
            dp: None,
        };
        let (enc, cost) = train_encoder(&x0, &y, &[0, 2], 2, &cfg, 1).unwrap();
        assert_eq!(cost, RdpCost::Zero);
        let z = enc.encode(&x0).unwrap();
        assert_eq!(z.shape(), (4, 3));
        assert!(z.iter_rows().all(|r| l2_norm(r) <= 1.0 + 1e-12));
    }

    proptest! {
        #[test]
        fn training_is_deterministic(seed in 0u64..1000) {
            let (x0, xk, y) = toy();
            let cfg = TrainConfig { epochs: 5, learning_rate: 0.1, hidden_units: 3, dp: Some(DpConfig { clip_norm: 0.5, noise_mult: 1.0 }) };
            let a = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &cfg, seed).unwrap();
            let b = train_head(&x0, &xk, &y, &[0, 1, 2, 3], 2, &cfg, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
