//! Closed-loop episode driver shared by dataset generation and simulation.

use crate::env::Environment;
use crate::error::Result;
use crate::mdp::{InteractionState, Stage, Trajectory, TransitionRecord};
use crate::reward::{composite_reward, sentiment_reward, RewardWeights};
use crate::rng::{derive_seed, SplitMix64};

/// Anything that picks the next stage from the planner state.
pub trait Agent {
    /// `last_sentiment` is the sentiment reward of the most recent reply.
    fn act(
        &mut self,
        state: &InteractionState,
        last_sentiment: f64,
        rng: &mut SplitMix64,
    ) -> Result<Stage>;
}

/// Sub-stream indices under an episode seed.
pub(crate) const ENV_STREAM: u64 = 0;
pub(crate) const AGENT_STREAM: u64 = 1;
pub(crate) const KIND_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy)]
pub struct RolloutLimits {
    /// Maximum number of agent decisions (the fixed opener is not counted).
    pub max_decisions: usize,
    /// End the episode once this many decisions have landed on the final
    /// stage, counted cumulatively from the first arrival.
    pub terminal_stage_turns: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub successful_termination: bool,
}

/// Run one episode: a fixed stage-1 opener with no agent decision, then up
/// to `max_decisions` agent turns. The last record is marked `done`.
pub fn run_rollout(
    env: &Environment,
    agent: &mut dyn Agent,
    weights: RewardWeights,
    window_k: usize,
    episode_seed: u64,
    limits: RolloutLimits,
) -> Result<Rollout> {
    let n = env.n_stages();
    let final_stage = Stage::new(n, n)?;
    let mut env_state = env.reset(derive_seed(episode_seed, ENV_STREAM));
    let mut agent_rng = SplitMix64::new(derive_seed(episode_seed, AGENT_STREAM));

    let mut state = InteractionState::initial(window_k, env.config().obs_dim);
    let (next_env, opener) = env.step(&env_state, Stage::FIRST)?;
    env_state = next_env;
    state = state.push_observation(opener.observation, Stage::FIRST, n)?;
    let mut last_sentiment = sentiment_reward(&opener.sentiment)?;

    let mut records = Vec::with_capacity(limits.max_decisions);
    let mut final_turns = 0usize;
    let mut successful = false;
    for _ in 0..limits.max_decisions {
        let action = agent.act(&state, last_sentiment, &mut agent_rng)?;
        let (next_env, reply) = env.step(&env_state, action)?;
        env_state = next_env;
        let reward = composite_reward(&reply.sentiment, action, weights, n)?;
        last_sentiment = sentiment_reward(&reply.sentiment)?;
        let next_state = state.push_observation(reply.observation, action, n)?;
        records.push(TransitionRecord {
            state,
            action,
            reward,
            next_state: next_state.clone(),
            done: false,
            sentiment: reply.sentiment,
        });
        state = next_state;
        if action == final_stage {
            final_turns += 1;
        }
        if let Some(cap) = limits.terminal_stage_turns {
            if final_turns >= cap {
                successful = true;
                break;
            }
        }
    }
    if let Some(last) = records.last_mut() {
        last.done = true;
    }
    Ok(Rollout {
        trajectory: Trajectory {
            records,
            seed: episode_seed,
            meta: Default::default(),
        },
        successful_termination: successful,
    })
}
