//! End-to-end training: optional encoder, perturbed message passing, head.
//!
//! The trained model answers black-box queries: given a feature matrix for
//! the nodes of its inference graph it re-runs the perturbed hops (with
//! fresh noise per query) and returns class probabilities for every node.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::accountant::{AccountingMode, ModuleBudgets, NoisePlan, PrivacyLevel, PrivacySpec, RdpCost};
use crate::cgl::{project_rows, CglParams};
use crate::error::{input, Result};
use crate::features::{l2_norm, FeatureMatrix};
use crate::graph::{normalized_adjacency, Graph, LabeledDataset, SymNormAdj};
use crate::model::{
    evaluate, predict_proba, train_encoder, train_head, EncoderConfig, LinearEncoder, MlpHead, TrainConfig,
};
use crate::pcmp::{pcmp_run_on, propagate, PcmpConfig, RunArtifacts};
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cgl: CglParams,
    pub privacy: PrivacySpec,
    #[serde(default)]
    pub mode: AccountingMode,
    #[serde(default)]
    pub max_degree: Option<usize>,
    pub train: TrainConfig,
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    /// Rescale every nonzero row of `X^(K)` to unit norm before the head.
    #[serde(default = "default_true")]
    pub normalize_embeddings: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// `x` with every nonzero row scaled to unit norm.
pub fn normalize_rows(x: &FeatureMatrix) -> FeatureMatrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = l2_norm(row);
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

impl PipelineConfig {
    /// RDP costs of the encoder and head under this configuration.
    pub fn module_budgets(&self) -> Result<ModuleBudgets> {
        let dae = self.encoder.map_or(RdpCost::Zero, |e| match e.dp {
            None => RdpCost::Zero,
            Some(dp) => RdpCost::GaussianSteps {
                steps: e.epochs,
                noise_multiplier: dp.noise_mult,
            },
        });
        if self.privacy.level == PrivacyLevel::Node {
            if self.train.dp.is_none() {
                return input("node-level privacy needs a DP-trained head (set train.dp)");
            }
            if self.encoder.is_some_and(|e| e.dp.is_none()) {
                return input("node-level privacy needs a DP-trained encoder (set encoder.dp)");
            }
        }
        let cm = self.train.rdp_cost();
        Ok(ModuleBudgets { dae, cm })
    }
}

/// Query access to a trained model.
pub trait ModelQuery {
    /// Class probabilities for every node, given the raw features of all
    /// nodes of the inference graph.
    fn query(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>>;

    fn num_classes(&self) -> usize;
}

/// Everything needed to answer queries.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    adj: SymNormAdj,
    cgl: CglParams,
    k_hops: u32,
    noise_std: f64,
    encoder: Option<LinearEncoder>,
    head: MlpHead,
    normalize_embeddings: bool,
    seed: u64,
    queries: Cell<u64>,
}

impl TrainedModel {
    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn encoder(&self) -> Option<&LinearEncoder> {
        self.encoder.as_ref()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// The same model answering queries on another graph.
    pub fn on_graph(&self, graph: &Graph) -> TrainedModel {
        TrainedModel {
            adj: normalized_adjacency(graph),
            queries: Cell::new(0),
            ..self.clone()
        }
    }

    fn prepare(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        let x = match &self.encoder {
            Some(enc) => enc.encode(features)?,
            None => features.clone(),
        };
        Ok(project_rows(&x, 1.0))
    }
}

impl ModelQuery for TrainedModel {
    fn query(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if features.rows() != self.adj.num_nodes() {
            return input(format!(
                "query has {} rows for a {}-node graph",
                features.rows(),
                self.adj.num_nodes()
            ));
        }
        let x0 = self.prepare(features)?;
        if 2 * x0.cols() != self.head.input_dim() {
            return input("query feature width does not match the head");
        }
        let index = self.queries.get();
        self.queries.set(index + 1);
        let seed = derive_seed(self.seed, rng::TAG_QUERY, index);
        let mut xk = propagate(&self.adj, &x0, &self.cgl, self.k_hops, self.noise_std, seed)?;
        if self.normalize_embeddings {
            xk = normalize_rows(&xk);
        }
        Ok((0..x0.rows())
            .map(|i| predict_proba(&self.head, x0.row(i), xk.row(i)))
            .collect())
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub model: TrainedModel,
    pub artifacts: RunArtifacts,
    pub accuracy_train: f64,
    /// `None` when the dataset has no test nodes.
    pub accuracy_test: Option<f64>,
}

impl PipelineOutput {
    pub fn plan(&self) -> &NoisePlan {
        &self.artifacts.plan
    }
}

/// Encoder (optional), calibrated perturbed hops, then the head.
pub fn run_pipeline(dataset: &LabeledDataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let budgets = cfg.module_budgets()?;
    let num_classes = dataset.num_classes();
    if num_classes == 0 {
        return input("dataset has no labelled nodes");
    }
    let (x0, encoder) = match &cfg.encoder {
        Some(enc_cfg) => {
            let (enc, _) = train_encoder(
                &dataset.features,
                &dataset.labels,
                &dataset.train_mask,
                num_classes,
                enc_cfg,
                cfg.seed,
            )?;
            (enc.encode(&dataset.features)?, Some(enc))
        }
        None => (dataset.features.clone(), None),
    };
    let pcmp_cfg = PcmpConfig {
        cgl: cfg.cgl,
        spec: cfg.privacy,
        k_hops: cfg.privacy.k_hops,
        seed: cfg.seed,
        mode: cfg.mode,
        max_degree: cfg.max_degree,
        budgets,
    };
    let artifacts = pcmp_run_on(&dataset.graph, &x0, &pcmp_cfg)?;
    let xk = &if cfg.normalize_embeddings {
        normalize_rows(&artifacts.x_k_final)
    } else {
        artifacts.x_k_final.clone()
    };
    let trained = train_head(
        &x0,
        xk,
        &dataset.labels,
        &dataset.train_mask,
        num_classes,
        &cfg.train,
        cfg.seed,
    )?;
    let accuracy_train = evaluate(&trained.head, &x0, xk, &dataset.labels, &dataset.train_mask)?;
    let accuracy_test = if dataset.test_mask.is_empty() {
        None
    } else {
        Some(evaluate(&trained.head, &x0, xk, &dataset.labels, &dataset.test_mask)?)
    };
    let model = TrainedModel {
        adj: normalized_adjacency(&dataset.graph),
        cgl: cfg.cgl,
        k_hops: cfg.privacy.k_hops,
        noise_std: artifacts.per_hop_noise_std,
        encoder,
        head: trained.head,
        normalize_embeddings: cfg.normalize_embeddings,
        seed: cfg.seed,
        queries: Cell::new(0),
    };
    Ok(PipelineOutput {
        model,
        artifacts,
        accuracy_train,
        accuracy_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ChainPreset;
    use crate::model::DpConfig;

    fn cfg(level: PrivacyLevel, k: u32) -> PipelineConfig {
        PipelineConfig {
            cgl: CglParams::new(0.9, 1.0, 0.0, 0.0).unwrap(),
            privacy: PrivacySpec::new(8.0, 1e-5, level, k, 0.9).unwrap(),
            mode: AccountingMode::Convergent,
            max_degree: None,
            train: TrainConfig::default(),
            encoder: None,
            normalize_embeddings: true,
            seed: 3,
        }
    }

    #[test]
    fn public_run_trains_and_answers_queries() {
        let data = ChainPreset::ChainS.generate(1).unwrap();
        let out = run_pipeline(&data, &cfg(PrivacyLevel::None, 4)).unwrap();
        assert!(out.accuracy_train > 0.5);
        let probs = out.model.query(&data.features).unwrap();
        assert_eq!(probs.len(), 48);
        // noise-free queries are repeatable
        assert_eq!(probs, out.model.query(&data.features).unwrap());
    }

    #[test]
    fn private_queries_draw_fresh_noise() {
        let data = ChainPreset::ChainS.generate(1).unwrap();
        let out = run_pipeline(&data, &cfg(PrivacyLevel::Edge, 4)).unwrap();
        assert!(out.model.noise_std() > 0.0);
        let a = out.model.query(&data.features).unwrap();
        let b = out.model.query(&data.features).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn node_level_requires_dp_head() {
        let data = ChainPreset::ChainS.generate(1).unwrap();
        let mut c = cfg(PrivacyLevel::Node, 2);
        assert!(run_pipeline(&data, &c).is_err());
        c.train.dp = Some(DpConfig {
            clip_norm: 1.0,
            noise_mult: 20.0,
        });
        c.privacy.epsilon = 16.0;
        let out = run_pipeline(&data, &c).unwrap();
        assert!(out.plan().eps_achieved <= 16.0);
    }
}
