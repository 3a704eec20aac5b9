//! JSON run configuration.
//!
//! ```json
//! {
//!   "dataset": { "preset": "chain-s" },
//!   "cgl": { "c_l": 0.9, "alpha1": 1.0, "alpha2": 0.0, "beta": 1.0 },
//!   "privacy": { "epsilon": 8.0, "delta": 1e-5, "level": "edge", "k_hops": 8, "gamma": 0.9 },
//!   "train": { "epochs": 300, "learning_rate": 0.5, "hidden_units": 16 },
//!   "output_dir": "runs/chain-s",
//!   "seed": 1
//! }
//! ```
//!
//! Optional fields: `mode` (`convergent` | `linear`), `max_degree`,
//! `encoder`, `normalize_embeddings`, `audit` and `dataset_seed` (defaults
//! to `seed`). Dataset paths are resolved against the config file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use caribou_core::accountant::{AccountingMode, PrivacySpec};
use caribou_core::audit::AuditConfig;
use caribou_core::cgl::CglParams;
use caribou_core::graph::{gen_chain_dataset, gen_planted_partition, load_dataset_with_split, ChainPreset, LabeledDataset, PlantedPartition};
use caribou_core::model::{EncoderConfig, TrainConfig};
use caribou_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Preset(ChainPreset),
    Chain {
        num_chains: usize,
        chain_len: usize,
        num_classes: usize,
        feat_dim: usize,
    },
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        split: Option<PathBuf>,
    },
    Planted(PlantedPartition),
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub cgl: CglParams,
    pub privacy: PrivacySpec,
    #[serde(default)]
    pub mode: AccountingMode,
    #[serde(default)]
    pub max_degree: Option<usize>,
    pub train: TrainConfig,
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default = "default_true")]
    pub normalize_embeddings: bool,
    #[serde(default)]
    pub audit: Option<AuditConfig>,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub dataset_seed: Option<u64>,
}

impl RunConfig {
    /// Parses `path`, resolves dataset paths and checks that they exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSource::Files {
            edges,
            features,
            labels,
            split,
        } = &mut cfg.dataset
        {
            for p in [Some(edges), Some(features), Some(labels), split.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(CliError::new("config", format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            cgl: self.cgl,
            privacy: self.privacy,
            mode: self.mode,
            max_degree: self.max_degree,
            train: self.train,
            encoder: self.encoder,
            normalize_embeddings: self.normalize_embeddings,
            seed: self.seed,
        }
    }

    pub fn load_dataset(&self) -> Result<LabeledDataset, CliError> {
        let seed = self.dataset_seed.unwrap_or(self.seed);
        let data = match &self.dataset {
            DatasetSource::Preset(p) => p.generate(seed),
            DatasetSource::Chain {
                num_chains,
                chain_len,
                num_classes,
                feat_dim,
            } => gen_chain_dataset(*num_chains, *chain_len, *num_classes, *feat_dim, seed),
            DatasetSource::Files {
                edges,
                features,
                labels,
                split,
            } => load_dataset_with_split(edges, features, labels, split.as_deref()),
            DatasetSource::Planted(p) => gen_planted_partition(p, seed),
        };
        data.map_err(|e| CliError::new("dataset", e))
    }
}
