//! Closed-loop evaluation episodes under the fixed termination protocol.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BehaviorPolicyKind, ScriptedAgent};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::learners::{ActionMode, ModelAgent, ModelBundle};
use crate::mdp::{Stage, DEFAULT_WINDOW_K};
use crate::reward::{RewardWeights, SentimentLogits};
use crate::rng::{derive_seed, SplitMix64};
use crate::rollout::{run_rollout, Agent, RolloutLimits, KIND_STREAM};

pub const EPISODE_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub episodes: usize,
    /// Turn limit including the fixed opening turn.
    pub max_turns: usize,
    pub terminal_stage_turns: usize,
    pub mode: ActionMode,
    pub weights: RewardWeights,
    pub master_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            max_turns: 151,
            terminal_stage_turns: 5,
            mode: ActionMode::Greedy,
            weights: RewardWeights::default(),
            master_seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.max_turns == 0 || self.terminal_stage_turns == 0 {
            return Err(Error::Config(
                "sim.episodes, sim.max_turns and sim.terminal_stage_turns must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Agent decisions available after the opener.
    pub fn max_decisions(&self) -> usize {
        self.max_turns - 1
    }
}

/// Outcome of one simulated episode. Per-turn vectors cover agent decisions
/// only; the fixed opener is excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeResult {
    pub stage_sequence: Vec<Stage>,
    pub rewards: Vec<f64>,
    pub sentiments: Vec<SentimentLogits>,
    pub reached_final: bool,
    pub successful_termination: bool,
    /// Number of agent decisions, equal to `stage_sequence.len()`.
    pub turn_count: usize,
    pub seed: u64,
}

impl EpisodeResult {
    /// Turns including the fixed opener.
    pub fn total_turns(&self) -> usize {
        self.turn_count + 1
    }

    pub fn final_stage(&self) -> Stage {
        self.stage_sequence.last().copied().unwrap_or(Stage::FIRST)
    }
}

/// What drives the planner side of an episode.
#[derive(Debug, Clone, Copy)]
pub enum SimPolicy<'a> {
    Model(&'a ModelBundle),
    Scripted(BehaviorPolicyKind),
}

impl SimPolicy<'_> {
    pub fn label(&self) -> String {
        match self {
            SimPolicy::Model(b) => b.algo.name().to_string(),
            SimPolicy::Scripted(k) => k.name().to_string(),
        }
    }

    /// Hash identifying the policy in episode logs.
    pub fn hash(&self) -> String {
        match self {
            SimPolicy::Model(b) => b.content_hash(),
            SimPolicy::Scripted(k) => crate::config::hash_json(k),
        }
    }

    fn window_k(&self) -> usize {
        match self {
            SimPolicy::Model(b) => b.window_k,
            SimPolicy::Scripted(_) => DEFAULT_WINDOW_K,
        }
    }
}

pub fn episode_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, index as u64)
}

fn check_shapes(policy: &SimPolicy<'_>, env: &EnvConfig) -> Result<()> {
    if let SimPolicy::Model(b) = policy {
        if b.n_stages != env.n_stages || b.obs_dim != env.obs_dim {
            return Err(Error::Config(format!(
                "model shape (stages {}, obs {}) does not match environment (stages {}, obs {})",
                b.n_stages, b.obs_dim, env.n_stages, env.obs_dim
            )));
        }
        b.validate()?;
    }
    Ok(())
}

fn episode_with_env(
    policy: &SimPolicy<'_>,
    env: &Environment,
    sim: &SimulationConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let n = env.n_stages();
    let limits = RolloutLimits {
        max_decisions: sim.max_decisions(),
        terminal_stage_turns: Some(sim.terminal_stage_turns),
    };
    let mut scripted;
    let mut model;
    let agent: &mut dyn Agent = match policy {
        SimPolicy::Model(bundle) => {
            model = ModelAgent {
                bundle,
                mode: sim.mode,
            };
            &mut model
        }
        SimPolicy::Scripted(kind) => {
            let mut kind_rng = SplitMix64::new(derive_seed(seed, KIND_STREAM));
            scripted = ScriptedAgent::new(kind.resolve(&mut kind_rng), n)?;
            &mut scripted
        }
    };
    let rollout = run_rollout(env, agent, sim.weights, policy.window_k(), seed, limits)?;
    let records = rollout.trajectory.records;
    let final_stage = Stage::new(n, n)?;
    let stage_sequence: Vec<Stage> = records.iter().map(|r| r.action).collect();
    Ok(EpisodeResult {
        reached_final: stage_sequence.contains(&final_stage),
        successful_termination: rollout.successful_termination,
        turn_count: stage_sequence.len(),
        rewards: records.iter().map(|r| r.reward).collect(),
        sentiments: records.iter().map(|r| r.sentiment).collect(),
        stage_sequence,
        seed,
    })
}

/// One episode: opener, then agent turns until the agent has spent
/// `terminal_stage_turns` turns at the final stage (counted cumulatively from
/// its first arrival) or the turn limit is hit.
pub fn run_episode(
    policy: &SimPolicy<'_>,
    env_config: &EnvConfig,
    sim: &SimulationConfig,
    episode_seed: u64,
) -> Result<EpisodeResult> {
    sim.validate()?;
    check_shapes(policy, env_config)?;
    let env = Environment::new(env_config.clone())?;
    episode_with_env(policy, &env, sim, episode_seed)
}

/// `sim.episodes` episodes with seeds derived from the master seed by index.
/// Results are in index order regardless of how work is scheduled.
pub fn run_batch(
    policy: &SimPolicy<'_>,
    env_config: &EnvConfig,
    sim: &SimulationConfig,
) -> Result<Vec<EpisodeResult>> {
    sim.validate()?;
    check_shapes(policy, env_config)?;
    let env = Environment::new(env_config.clone())?;
    (0..sim.episodes)
        .into_par_iter()
        .map(|i| episode_with_env(policy, &env, sim, episode_seed(sim.master_seed, i)))
        .collect()
}

/// First line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLogHeader {
    pub version: u32,
    pub policy: String,
    pub model_hash: String,
    pub config_hash: String,
    pub env: EnvConfig,
    pub sim: SimulationConfig,
}

pub fn write_episode_log<W: Write>(
    header: &EpisodeLogHeader,
    results: &[EpisodeResult],
    mut out: W,
) -> Result<()> {
    serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_episode_log<R: BufRead>(input: R) -> Result<(EpisodeLogHeader, Vec<EpisodeResult>)> {
    let mut lines = input.lines().enumerate();
    let header: EpisodeLogHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l?).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    if header.version != EPISODE_LOG_VERSION {
        return Err(Error::Schema(format!(
            "unsupported episode log version {}",
            header.version
        )));
    }
    let n = header.env.n_stages;
    let mut results = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeResult = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        for s in &r.stage_sequence {
            s.check(n)
                .map_err(|e| Error::Schema(format!("line {}: {e}", idx + 1)))?;
        }
        if r.turn_count != r.stage_sequence.len()
            || r.rewards.len() != r.turn_count
            || r.sentiments.len() != r.turn_count
        {
            return Err(Error::Schema(format!(
                "line {}: per-turn vectors disagree with turn_count",
                idx + 1
            )));
        }
        results.push(r);
    }
    Ok((header, results))
}

pub fn save_episode_log(
    header: &EpisodeLogHeader,
    results: &[EpisodeResult],
    path: &Path,
) -> Result<()> {
    write_episode_log(
        header,
        results,
        BufWriter::new(std::fs::File::create(path)?),
    )
}

pub fn load_episode_log(path: &Path) -> Result<(EpisodeLogHeader, Vec<EpisodeResult>)> {
    read_episode_log(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(max_turns: usize, cap: usize) -> SimulationConfig {
        SimulationConfig {
            max_turns,
            terminal_stage_turns: cap,
            ..SimulationConfig::default()
        }
    }

    fn stages(r: &EpisodeResult) -> Vec<usize> {
        r.stage_sequence.iter().map(|s| s.index()).collect()
    }

    #[test]
    fn always_advance_episode() {
        let p = SimPolicy::Scripted(BehaviorPolicyKind::LinearScript);
        let r = run_episode(&p, &EnvConfig::default(), &sim(151, 5), 3).unwrap();
        assert_eq!(stages(&r), vec![2, 3, 4, 5, 6, 6, 6, 6, 6]);
        assert_eq!(r.turn_count, 9);
        assert_eq!(r.total_turns(), 10);
        assert!(r.successful_termination && r.reached_final);
    }

    /// Stays at stage 1 forever.
    #[derive(Debug)]
    struct Stay;
    impl Agent for Stay {
        fn act(
            &mut self,
            s: &crate::mdp::InteractionState,
            _: f64,
            _: &mut SplitMix64,
        ) -> Result<Stage> {
            Ok(s.prev_stage)
        }
    }

    #[test]
    fn always_stay_hits_turn_limit() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let limits = RolloutLimits {
            max_decisions: sim(151, 5).max_decisions(),
            terminal_stage_turns: Some(5),
        };
        let r = run_rollout(&env, &mut Stay, RewardWeights::default(), 4, 1, limits).unwrap();
        assert_eq!(r.trajectory.records.len(), 150);
        assert!(!r.successful_termination);
        assert!(r
            .trajectory
            .records
            .iter()
            .all(|t| t.action == Stage::FIRST));
    }

    #[test]
    fn degenerate_cap_ends_on_first_final_turn() {
        let p = SimPolicy::Scripted(BehaviorPolicyKind::LinearScript);
        let r = run_episode(&p, &EnvConfig::default(), &sim(151, 1), 0).unwrap();
        assert_eq!(stages(&r), vec![2, 3, 4, 5, 6]);
        assert!(r.successful_termination);
    }

    #[test]
    fn batch_matches_single_and_is_deterministic() {
        let p = SimPolicy::Scripted(BehaviorPolicyKind::RandomAdjacent);
        let cfg = SimulationConfig {
            episodes: 1,
            master_seed: 77,
            ..SimulationConfig::default()
        };
        let batch = run_batch(&p, &EnvConfig::default(), &cfg).unwrap();
        let single = run_episode(&p, &EnvConfig::default(), &cfg, episode_seed(77, 0)).unwrap();
        assert_eq!(batch, vec![single]);

        let cfg = SimulationConfig {
            episodes: 20,
            ..cfg
        };
        let a = run_batch(&p, &EnvConfig::default(), &cfg).unwrap();
        let b = run_batch(&p, &EnvConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.turn_count <= 150);
            assert!(!r.successful_termination || r.reached_final);
            let mut prev = 1;
            for s in &r.stage_sequence {
                assert!(s.index().abs_diff(prev) <= 1);
                prev = s.index();
            }
            if r.successful_termination {
                let first = r
                    .stage_sequence
                    .iter()
                    .position(|s| s.index() == 6)
                    .unwrap();
                let at_final = r.stage_sequence[first..]
                    .iter()
                    .filter(|s| s.index() == 6)
                    .count();
                assert_eq!(at_final, 5);
            }
        }
    }

    #[test]
    fn log_round_trip() {
        let p = SimPolicy::Scripted(BehaviorPolicyKind::RandomAdjacent);
        let cfg = SimulationConfig {
            episodes: 4,
            ..SimulationConfig::default()
        };
        let results = run_batch(&p, &EnvConfig::default(), &cfg).unwrap();
        let header = EpisodeLogHeader {
            version: EPISODE_LOG_VERSION,
            policy: p.label(),
            model_hash: p.hash(),
            config_hash: "x".into(),
            env: EnvConfig::default(),
            sim: cfg,
        };
        let mut buf = Vec::new();
        write_episode_log(&header, &results, &mut buf).unwrap();
        let (h, back) = read_episode_log(&buf[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, results);
    }
}
