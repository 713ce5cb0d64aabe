//! Offline dataset generation, transition rebalancing and the line-delimited
//! dataset file format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::hash_json;
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::mdp::{
    valid_actions, InteractionState, ObservationVector, Stage, Trajectory, TransitionRecord,
    DEFAULT_WINDOW_K,
};
use crate::reward::{composite_reward, RewardWeights, SentimentLogits};
use crate::rng::{derive_seed, SplitMix64};
use crate::rollout::{run_rollout, Agent, RolloutLimits, KIND_STREAM};

pub const DATASET_VERSION: u32 = 1;

/// Scripted behavior policies that produce offline data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorPolicyKind {
    /// Uniform over the adjacent-stage mask.
    RandomAdjacent,
    /// Advance whenever possible.
    LinearScript,
    /// Advance only after a reply with sentiment reward above 0.5.
    PatientScript,
    /// Per-episode draw of one of the three kinds above, weighted in
    /// `[random_adjacent, linear_script, patient_script]` order.
    Mixture { weights: [f64; 3] },
}

impl BehaviorPolicyKind {
    pub fn validate(&self) -> Result<()> {
        if let Self::Mixture { weights } = self {
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Config("mixture weights must be nonnegative".into()));
            }
            if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config("mixture weights must sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomAdjacent => "random_adjacent",
            Self::LinearScript => "linear_script",
            Self::PatientScript => "patient_script",
            Self::Mixture { .. } => "mixture",
        }
    }

    /// Parses `random_adjacent`, `linear_script`, `patient_script`,
    /// `mixture` (default weights) or `mixture:w1,w2,w3`.
    pub fn parse(s: &str) -> Result<Self> {
        let kind = match s {
            "random_adjacent" | "random-adjacent" => Self::RandomAdjacent,
            "linear_script" | "linear-script" => Self::LinearScript,
            "patient_script" | "patient-script" => Self::PatientScript,
            "mixture" => Self::default_mixture(),
            other => {
                let Some(rest) = other.strip_prefix("mixture:") else {
                    return Err(Error::Usage(format!("unknown behavior kind '{other}'")));
                };
                let parts: Vec<f64> = rest
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| Error::Usage(format!("bad mixture weights '{rest}': {e}")))?;
                let weights: [f64; 3] = parts
                    .try_into()
                    .map_err(|_| Error::Usage("mixture needs exactly 3 weights".into()))?;
                Self::Mixture { weights }
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn default_mixture() -> Self {
        Self::Mixture {
            weights: [0.5, 0.2, 0.3],
        }
    }

    pub(crate) fn resolve(&self, rng: &mut SplitMix64) -> Self {
        match self {
            Self::Mixture { weights } => {
                let u = rng.next_f64();
                let mut acc = 0.0;
                for (w, kind) in weights.iter().zip([
                    Self::RandomAdjacent,
                    Self::LinearScript,
                    Self::PatientScript,
                ]) {
                    acc += w;
                    if u < acc {
                        return kind;
                    }
                }
                Self::PatientScript
            }
            other => *other,
        }
    }
}

/// A non-mixture behavior policy acting as a rollout agent.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    kind: BehaviorPolicyKind,
    n_stages: usize,
}

impl ScriptedAgent {
    pub fn new(kind: BehaviorPolicyKind, n_stages: usize) -> Result<Self> {
        if matches!(kind, BehaviorPolicyKind::Mixture { .. }) {
            return Err(Error::Config(
                "a mixture must be resolved to a single kind per episode".into(),
            ));
        }
        Ok(Self { kind, n_stages })
    }
}

impl Agent for ScriptedAgent {
    fn act(
        &mut self,
        state: &InteractionState,
        last_sentiment: f64,
        rng: &mut SplitMix64,
    ) -> Result<Stage> {
        let mask = valid_actions(state.prev_stage, self.n_stages)?;
        let current = state.prev_stage.index();
        let advance = Stage::new((current + 1).min(self.n_stages), self.n_stages)?;
        Ok(match self.kind {
            BehaviorPolicyKind::RandomAdjacent => {
                let options: Vec<Stage> = mask.iter().collect();
                options[rng.next_index(options.len())]
            }
            BehaviorPolicyKind::LinearScript => advance,
            BehaviorPolicyKind::PatientScript if last_sentiment > 0.5 => advance,
            BehaviorPolicyKind::PatientScript => state.prev_stage,
            BehaviorPolicyKind::Mixture { .. } => unreachable!("resolved at construction"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub records: Vec<TransitionRecord>,
    pub n_stages: usize,
    pub obs_dim: usize,
    pub window_k: usize,
    pub provenance: BTreeMap<String, String>,
}

impl OfflineDataset {
    pub fn empty(n_stages: usize, obs_dim: usize, window_k: usize) -> Self {
        Self {
            records: Vec::new(),
            n_stages,
            obs_dim,
            window_k,
            provenance: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.window_k * self.obs_dim + self.n_stages
    }

    /// Check every record against the declared shape parameters.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let ctx = |e: Error| Error::Schema(format!("record {i}: {e}"));
            r.state
                .validate(self.window_k, self.obs_dim, self.n_stages)
                .map_err(ctx)?;
            r.next_state
                .validate(self.window_k, self.obs_dim, self.n_stages)
                .map_err(ctx)?;
            r.validate(self.n_stages).map_err(ctx)?;
        }
        Ok(())
    }

    /// Reward weights recorded at generation time.
    pub fn reward_weights(&self) -> Result<RewardWeights> {
        let raw = self
            .provenance
            .get("reward_alpha")
            .ok_or_else(|| Error::Config("dataset provenance lacks reward_alpha".into()))?;
        let alpha = raw
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad reward_alpha '{raw}': {e}")))?;
        RewardWeights::new(alpha)
    }

    /// Stable content hash over header and records.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_dataset(self, &mut buf).expect("writing to memory cannot fail");
        crate::config::hash_bytes(&buf)
    }
}

/// Roll out `episodes` episodes of `behavior`, each `max_turns` decisions
/// long, and return them in episode order.
pub fn generate_trajectories(
    env_config: &EnvConfig,
    behavior: BehaviorPolicyKind,
    episodes: usize,
    max_turns: usize,
    weights: RewardWeights,
    window_k: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if episodes == 0 || max_turns == 0 {
        return Err(Error::Config("episodes and max_turns must be >= 1".into()));
    }
    if window_k == 0 {
        return Err(Error::Config("window_k must be >= 1".into()));
    }
    behavior.validate()?;
    let env = Environment::new(env_config.clone())?;
    let limits = RolloutLimits {
        max_decisions: max_turns,
        terminal_stage_turns: None,
    };
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let episode_seed = derive_seed(seed, i as u64);
            let mut kind_rng = SplitMix64::new(derive_seed(episode_seed, KIND_STREAM));
            let kind = behavior.resolve(&mut kind_rng);
            let mut agent = ScriptedAgent::new(kind, env.n_stages())?;
            let mut rollout =
                run_rollout(&env, &mut agent, weights, window_k, episode_seed, limits)?;
            rollout
                .trajectory
                .meta
                .insert("behavior".into(), kind.name().into());
            Ok(rollout.trajectory)
        })
        .collect()
}

pub fn generate_dataset(
    env_config: &EnvConfig,
    behavior: BehaviorPolicyKind,
    episodes: usize,
    max_turns: usize,
    weights: RewardWeights,
    seed: u64,
) -> Result<OfflineDataset> {
    generate_dataset_with_window(
        env_config,
        behavior,
        episodes,
        max_turns,
        weights,
        DEFAULT_WINDOW_K,
        seed,
    )
}

pub fn generate_dataset_with_window(
    env_config: &EnvConfig,
    behavior: BehaviorPolicyKind,
    episodes: usize,
    max_turns: usize,
    weights: RewardWeights,
    window_k: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let trajectories = generate_trajectories(
        env_config, behavior, episodes, max_turns, weights, window_k, seed,
    )?;
    let mut data = OfflineDataset::empty(env_config.n_stages, env_config.obs_dim, window_k);
    data.records = trajectories.into_iter().flat_map(|t| t.records).collect();
    let env_json = serde_json::to_string(env_config).expect("config serializes");
    let p = &mut data.provenance;
    p.insert("env_config_hash".into(), hash_json(env_config));
    p.insert("env_config".into(), env_json);
    p.insert(
        "behavior".into(),
        serde_json::to_string(&behavior).expect("behavior serializes"),
    );
    p.insert("episodes".into(), episodes.to_string());
    p.insert("max_turns".into(), max_turns.to_string());
    p.insert("reward_alpha".into(), weights.alpha().to_string());
    p.insert("window_k".into(), window_k.to_string());
    p.insert("seed".into(), seed.to_string());
    Ok(data)
}

/// Rebuild a generated (not augmented) dataset from its provenance alone.
pub fn regenerate_from_provenance(provenance: &BTreeMap<String, String>) -> Result<OfflineDataset> {
    let get = |k: &str| {
        provenance
            .get(k)
            .ok_or_else(|| Error::Config(format!("provenance lacks '{k}'")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|e| Error::Config(format!("provenance '{k}': {e}")))
    };
    let env: EnvConfig = serde_json::from_str(get("env_config")?)
        .map_err(|e| Error::Config(format!("provenance env_config: {e}")))?;
    if hash_json(&env) != *get("env_config_hash")? {
        return Err(Error::Config(
            "env_config does not match its recorded hash".into(),
        ));
    }
    let behavior: BehaviorPolicyKind = serde_json::from_str(get("behavior")?)
        .map_err(|e| Error::Config(format!("provenance behavior: {e}")))?;
    let alpha: f64 = get("reward_alpha")?
        .parse()
        .map_err(|e| Error::Config(format!("provenance reward_alpha: {e}")))?;
    generate_dataset_with_window(
        &env,
        behavior,
        num("episodes")? as usize,
        num("max_turns")? as usize,
        RewardWeights::new(alpha)?,
        num("window_k")? as usize,
        num("seed")?,
    )
}

/// Counts of `(prev_stage, action)` pairs.
pub fn transition_histogram(data: &OfflineDataset) -> Result<BTreeMap<(usize, usize), usize>> {
    if data.is_empty() {
        return Err(Error::EmptyInput(
            "transition histogram of an empty dataset",
        ));
    }
    let mut hist = BTreeMap::new();
    for r in &data.records {
        *hist
            .entry((r.state.prev_stage.index(), r.action.index()))
            .or_insert(0) += 1;
    }
    Ok(hist)
}

/// Raise every adjacent cross-stage transition `x -> y` to at least
/// `per_transition_target` records by cloning same-stage `x -> x` donors,
/// re-querying the environment for action `y` from a latent state whose trust
/// equals the threshold of `x`, and relabeling the reward. Originals are kept
/// in place; new records are appended in `(x, y)` order.
pub fn rebalance_transitions(
    data: &OfflineDataset,
    env_config: &EnvConfig,
    per_transition_target: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if per_transition_target == 0 {
        return Ok(data.clone());
    }
    if env_config.n_stages != data.n_stages || env_config.obs_dim != data.obs_dim {
        return Err(Error::Schema(
            "environment config does not match dataset shape".into(),
        ));
    }
    let weights = data.reward_weights()?;
    let env = Environment::new(env_config.clone())?;
    let n = data.n_stages;
    let counts = if data.is_empty() {
        BTreeMap::new()
    } else {
        transition_histogram(data)?
    };

    let mut deficits = Vec::new();
    for x in 1..=n {
        for y in [x.wrapping_sub(1), x + 1] {
            if y == 0 || y > n {
                continue;
            }
            let have = counts.get(&(x, y)).copied().unwrap_or(0);
            if have < per_transition_target {
                deficits.push((x, y, per_transition_target - have));
            }
        }
    }
    let mut donors: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        if r.action == r.state.prev_stage {
            donors.entry(r.action.index()).or_default().push(i);
        }
    }
    if let Some(&(x, _, _)) = deficits.iter().find(|(x, _, _)| !donors.contains_key(x)) {
        return Err(Error::AugmentationInfeasible { stage: x });
    }

    let generated: Vec<Vec<TransitionRecord>> = deficits
        .par_iter()
        .map(|&(x, y, missing)| {
            let pool = &donors[&x];
            let type_seed = derive_seed(seed, (x * (n + 1) + y) as u64);
            let mut pick = SplitMix64::new(type_seed);
            let from = Stage::new(x, n)?;
            let to = Stage::new(y, n)?;
            let trust = env.threshold(from);
            (0..missing)
                .map(|k| {
                    let donor = &data.records[pool[pick.next_index(pool.len())]];
                    let latent = env.state_with_trust(trust, derive_seed(type_seed, k as u64 + 1));
                    let (_, reply) = env.step(&latent, to)?;
                    let reward = composite_reward(&reply.sentiment, to, weights, n)?;
                    let next_state = donor.state.push_observation(reply.observation, to, n)?;
                    Ok(TransitionRecord {
                        state: donor.state.clone(),
                        action: to,
                        reward,
                        next_state,
                        done: donor.done,
                        sentiment: reply.sentiment,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out = data.clone();
    for ((x, y, missing), recs) in deficits.iter().zip(generated) {
        out.provenance
            .insert(format!("augmented_{x}_to_{y}"), missing.to_string());
        out.records.extend(recs);
    }
    out.provenance
        .insert("augment_target".into(), per_transition_target.to_string());
    out.provenance
        .insert("augment_seed".into(), seed.to_string());
    out.provenance
        .insert("augment_env_config_hash".into(), hash_json(env_config));
    Ok(out)
}

// ---- file format ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    n_stages: usize,
    obs_dim: usize,
    window_k: usize,
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    window: Vec<Vec<f64>>,
    prev_stage: usize,
    action: usize,
    reward: f64,
    sentiment: [f64; 3],
    next_window: Vec<Vec<f64>>,
    next_prev_stage: usize,
    done: bool,
}

impl RecordLine {
    fn from_record(r: &TransitionRecord) -> Self {
        let win = |s: &InteractionState| s.window.iter().map(|o| o.0.clone()).collect();
        Self {
            window: win(&r.state),
            prev_stage: r.state.prev_stage.index(),
            action: r.action.index(),
            reward: r.reward,
            sentiment: r.sentiment.into(),
            next_window: win(&r.next_state),
            next_prev_stage: r.next_state.prev_stage.index(),
            done: r.done,
        }
    }

    fn into_record(self, n_stages: usize) -> Result<TransitionRecord> {
        let win = |w: Vec<Vec<f64>>| w.into_iter().map(ObservationVector).collect();
        Ok(TransitionRecord {
            state: InteractionState {
                window: win(self.window),
                prev_stage: Stage::new(self.prev_stage, n_stages)?,
            },
            action: Stage::new(self.action, n_stages)?,
            reward: self.reward,
            next_state: InteractionState {
                window: win(self.next_window),
                prev_stage: Stage::new(self.next_prev_stage, n_stages)?,
            },
            done: self.done,
            sentiment: SentimentLogits::from(self.sentiment),
        })
    }
}

pub fn write_dataset<W: Write>(data: &OfflineDataset, mut out: W) -> Result<()> {
    let header = Header {
        version: DATASET_VERSION,
        n_stages: data.n_stages,
        obs_dim: data.obs_dim,
        window_k: data.window_k,
        provenance: data.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for r in &data.records {
        serde_json::to_writer(&mut out, &RecordLine::from_record(r))
            .map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<OfflineDataset> {
    let mut lines = input.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
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
    if header.version != DATASET_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset version {}",
            header.version
        )));
    }
    let mut data = OfflineDataset {
        records: Vec::new(),
        n_stages: header.n_stages,
        obs_dim: header.obs_dim,
        window_k: header.window_k,
        provenance: header.provenance,
    };
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let record = raw
            .into_record(data.n_stages)
            .map_err(|e| Error::Schema(format!("line {line_no}: {e}")))?;
        for s in [&record.state, &record.next_state] {
            s.validate(data.window_k, data.obs_dim, data.n_stages)
                .map_err(|e| Error::Schema(format!("line {line_no}: {e}")))?;
        }
        record
            .validate(data.n_stages)
            .map_err(|e| Error::Schema(format!("line {line_no}: {e}")))?;
        data.records.push(record);
    }
    Ok(data)
}

pub fn save_dataset(data: &OfflineDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(data, BufWriter::new(file))
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(BufReader::new(file))
}
