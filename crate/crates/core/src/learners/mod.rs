//! Offline learners: behavior cloning, conservative Q-learning with a KL pull
//! toward a frozen BC policy, and implicit Q-learning with an
//! advantage-weighted actor.

mod bundle;
mod losses;
mod select;
mod train;

pub use bundle::{load_model, save_model, ModelBundle, MODEL_VERSION};
pub use losses::{
    awac_policy_loss, bc_loss, cql_loss, iql_q_loss, iql_value_loss, Batch, LossOutput,
};
pub use select::{select_action, select_from_scores, ActionMode, ModelAgent};
pub use train::{init_bundle, train, EpochLoss, TrainOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, DEFAULT_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Bc,
    Cql,
    IqlAwac,
}

impl Algo {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(Self::Bc),
            "cql" => Ok(Self::Cql),
            "iql-awac" | "iql_awac" => Ok(Self::IqlAwac),
            other => Err(Error::Usage(format!("unknown algo '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bc => "bc",
            Self::Cql => "cql",
            Self::IqlAwac => "iql_awac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub algo: Algo,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub cql_alpha: f64,
    pub cql_temperature: f64,
    pub kl_weight: f64,
    pub expectile: f64,
    pub awac_lambda: f64,
    pub advantage_clip: f64,
    pub target_sync_every: usize,
    pub seed: u64,
    pub hidden: usize,
    pub optimizer: AdamConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::IqlAwac,
            epochs: 10,
            batch_size: 64,
            gamma: 0.95,
            cql_alpha: 3.0,
            cql_temperature: 1.0,
            kl_weight: 0.1,
            expectile: 0.7,
            awac_lambda: 1.0,
            advantage_clip: 20.0,
            target_sync_every: 200,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            optimizer: AdamConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("learner.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return bad("expectile must lie in (0, 1)");
        }
        if !(self.awac_lambda > 0.0 && self.awac_lambda.is_finite()) {
            return bad("awac_lambda must be > 0");
        }
        if !(self.cql_alpha >= 0.0 && self.cql_alpha.is_finite()) {
            return bad("cql_alpha must be >= 0");
        }
        if !(self.cql_temperature > 0.0 && self.cql_temperature.is_finite()) {
            return bad("cql_temperature must be > 0");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be >= 0");
        }
        if !(self.advantage_clip > 0.0 && self.advantage_clip.is_finite()) {
            return bad("advantage_clip must be > 0");
        }
        if self.batch_size == 0 || self.target_sync_every == 0 || self.hidden == 0 {
            return bad("batch_size, target_sync_every and hidden must be >= 1");
        }
        if !(self.optimizer.step_size > 0.0 && self.optimizer.step_size.is_finite()) {
            return bad("optimizer.step_size must be > 0");
        }
        Ok(())
    }
}
