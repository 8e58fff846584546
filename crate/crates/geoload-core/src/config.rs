//! Run configuration and the config hash embedded in every output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SplitConfig;
use crate::graph::NeighborRule;
use crate::metrics::StratumHours;
use crate::model::TrainerConfig;

/// SHA-256 of a value's canonical JSON serialization, hex-encoded.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialization cannot fail");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    /// Number of Monte Carlo masks per explained sample.
    pub mask_count: usize,
    pub seed: u64,
    /// How many test samples to aggregate over (0 = all).
    pub sample_limit: usize,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig { mask_count: 512, seed: 0, sample_limit: 96 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub graph_rule: NeighborRule,
    /// GCN layer output dims; empty disables the generator (None-MF path).
    pub gcn_dims: Vec<usize>,
    /// Hidden dims of the dense forecaster.
    pub dense_hidden: Vec<usize>,
    pub trainer: TrainerConfig,
    pub split: SplitConfig,
    pub hours: StratumHours,
    pub explainer: ExplainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph_rule: NeighborRule::default(),
            gcn_dims: vec![16, 16],
            dense_hidden: vec![64, 32],
            trainer: TrainerConfig::default(),
            split: SplitConfig::default(),
            hours: StratumHours::default(),
            explainer: ExplainerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}
