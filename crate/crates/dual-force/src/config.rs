//! Run configuration: one JSON document covering data generation,
//! discriminator fitting, FRE pretraining, training, and evaluation.
//! Unknown keys are rejected everywhere so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscConfig;
use crate::error::Result;
use crate::eval::EvalConfig;
use crate::fre::{FreConfig, RewardFamilyConfig};
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetsConfig {
    pub offline_episodes: usize,
    pub expert_episodes: usize,
    /// rollout length; None uses the scenario default
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl Default for DatasetsConfig {
    fn default() -> Self {
        Self { offline_episodes: 30, expert_episodes: 20, horizon: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreSection {
    pub model: FreConfig,
    pub rewards: RewardFamilyConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// one of: chain2, grid8-corridors, grid-obstacle
    pub scenario: String,
    #[serde(default)]
    pub datasets: DatasetsConfig,
    #[serde(default)]
    pub discriminator: DiscConfig,
    #[serde(default)]
    pub fre: FreSection,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn for_scenario(name: &str) -> Self {
        Self {
            scenario: name.to_string(),
            datasets: DatasetsConfig::default(),
            discriminator: DiscConfig::default(),
            fre: FreSection::default(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
