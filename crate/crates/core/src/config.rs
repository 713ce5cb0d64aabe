//! Run configuration file (TOML, strict keys) and content hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::BehaviorPolicyKind;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learners::{ActionMode, LearnerConfig};
use crate::mdp::DEFAULT_WINDOW_K;
use crate::reward::RewardWeights;
use crate::simulator::SimulationConfig;

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Hash of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    hash_bytes(&serde_json::to_vec(value).expect("value serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub episodes: usize,
    pub max_turns: usize,
    pub behavior: String,
    pub window_k: usize,
    pub seed: u64,
    pub augment_per_transition: usize,
    pub augment_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            max_turns: 60,
            behavior: "mixture".into(),
            window_k: DEFAULT_WINDOW_K,
            seed: 0,
            augment_per_transition: 1000,
            augment_seed: 1,
        }
    }
}

impl DataSection {
    pub fn behavior(&self) -> Result<BehaviorPolicyKind> {
        BehaviorPolicyKind::parse(&self.behavior).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub episodes: usize,
    pub max_turns: usize,
    pub terminal_stage_turns: usize,
    pub mode: ActionMode,
    pub master_seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            episodes: d.episodes,
            max_turns: d.max_turns,
            terminal_stage_turns: d.terminal_stage_turns,
            mode: d.mode,
            master_seed: d.master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub learner: LearnerConfig,
    pub sim: SimSection,
    pub data: DataSection,
    pub paths: PathSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.sim_config().validate()?;
        self.data.behavior()?;
        if self.data.window_k == 0 {
            return Err(Error::Config("data.window_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimulationConfig {
        SimulationConfig {
            episodes: self.sim.episodes,
            max_turns: self.sim.max_turns,
            terminal_stage_turns: self.sim.terminal_stage_turns,
            mode: self.sim.mode,
            weights: self.reward,
            master_seed: self.sim.master_seed,
        }
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}
