//! Differentially private multi-hop graph message passing.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: undirected graphs, the symmetric-normalised adjacency,
//!   adjacent-graph enumeration, dataset ingestion and the chain generator.
//! - [`cgl`]: the contractive graph layer and row-norm projection.
//! - [`accountant`]: sensitivity bounds, RDP/GDP/DP conversions and noise
//!   calibration.
//! - [`pcmp`]: the perturbed contractive message passing loop.
//! - [`model`]: the MLP classification head (plain or DP-SGD training).
//! - [`pipeline`]: message passing followed by head training, plus the
//!   black-box query surface used by the auditor.
//! - [`audit`]: membership-inference games scored by AUC.

pub mod accountant;
pub mod audit;
pub mod cgl;
pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod normal;
pub mod pcmp;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
