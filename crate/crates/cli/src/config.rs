//! Run configuration loaded from TOML; command-line flags override it.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use usp_core::authenticity::{DEFAULT_ADV_DIMS, DEFAULT_REPETITION_THRESHOLD};
use usp_core::consistency::VerdictMapping;
use usp_core::corpus::DEFAULT_TOKEN_BUDGET;
use usp_core::gateway::GatewayConfig;
use usp_core::reward::{AiOrientation, DEFAULT_LAMBDA};
use usp_core::sampler::{DEFAULT_LDL_K, DEFAULT_REDUCED_DIMS};
use usp_core::simulator::DEFAULT_TURN_LIMIT;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub gateway: GatewayConfig,
    pub ingest: IngestSettings,
    pub simulation: SimulationSettings,
    pub metrics: MetricSettings,
    pub sampler: SamplerSettings,
    pub reward: RewardSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub token_budget: usize,
    pub min_user_turns: usize,
    pub dedup: bool,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            token_budget: DEFAULT_TOKEN_BUDGET,
            min_user_turns: 1,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub turn_limit: usize,
    pub token_budget: usize,
    pub early_stop: bool,
    pub repetition_threshold: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            turn_limit: DEFAULT_TURN_LIMIT,
            token_budget: DEFAULT_TOKEN_BUDGET,
            early_stop: true,
            repetition_threshold: DEFAULT_REPETITION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub verdict_mapping: VerdictMapping,
    pub adv_dims: usize,
    pub ava_threshold: f64,
    pub esr_threshold: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            verdict_mapping: VerdictMapping::Strict,
            adv_dims: DEFAULT_ADV_DIMS,
            ava_threshold: 0.5,
            esr_threshold: DEFAULT_REPETITION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Pca,
    NeighborGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub dims: usize,
    pub k: usize,
    pub ldl_k: usize,
    pub reducer: Reducer,
    pub graph_neighbors: usize,
    pub graph_epochs: usize,
    pub bandwidth: Option<f64>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            dims: DEFAULT_REDUCED_DIMS,
            k: 5,
            ldl_k: DEFAULT_LDL_K,
            reducer: Reducer::Pca,
            graph_neighbors: 10,
            graph_epochs: 200,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSettings {
    pub lambda: f64,
    pub orientation: AiOrientation,
}

impl Default for RewardSettings {
    fn default() -> Self {
        RewardSettings {
            lambda: DEFAULT_LAMBDA,
            orientation: AiOrientation::Human,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
