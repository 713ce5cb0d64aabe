use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{valid_actions, InteractionState, Stage, StageMask};
use crate::nn::masked_softmax;
use crate::rng::SplitMix64;
use crate::rollout::Agent;

use super::{Algo, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Greedy,
    Sample,
}

/// Pick a stage from per-stage scores restricted to `mask`. Greedy takes the
/// lowest-indexed maximum; sample draws from the masked softmax.
pub fn select_from_scores(
    scores: &[f64],
    mask: &StageMask,
    mode: ActionMode,
    rng: &mut SplitMix64,
) -> Result<Stage> {
    match mode {
        ActionMode::Greedy => {
            let mut best: Option<Stage> = None;
            for s in mask.iter() {
                let v = scores[s.offset()];
                if best.is_none_or(|b| v > scores[b.offset()]) {
                    best = Some(s);
                }
            }
            best.ok_or_else(|| Error::Numeric("empty stage mask".into()))
        }
        ActionMode::Sample => {
            let probs = masked_softmax(scores, mask)?;
            let u = rng.next_f64();
            let mut acc = 0.0;
            let mut last = None;
            for s in mask.iter() {
                acc += probs[s.offset()];
                last = Some(s);
                if u < acc {
                    return Ok(s);
                }
            }
            last.ok_or_else(|| Error::Numeric("empty stage mask".into()))
        }
    }
}

/// Next stage for a trained model. BC and IQL+AWAC act on the policy head;
/// CQL acts on Q (sampling uses the softmax of `Q / temperature`).
pub fn select_action(
    bundle: &ModelBundle,
    state: &InteractionState,
    mode: ActionMode,
    rng: &mut SplitMix64,
) -> Result<Stage> {
    let mask = valid_actions(state.prev_stage, bundle.n_stages)?;
    let input = state.flatten(bundle.n_stages);
    let scores = match bundle.algo {
        Algo::Bc | Algo::IqlAwac => bundle
            .policy
            .as_ref()
            .ok_or_else(|| Error::Schema("model has no policy network".into()))?
            .forward(&input)?,
        Algo::Cql => {
            let q = bundle
                .q
                .as_ref()
                .ok_or_else(|| Error::Schema("model has no q network".into()))?
                .forward(&input)?;
            let tau = bundle.learner.cql_temperature;
            q.into_iter().map(|v| v / tau).collect()
        }
    };
    select_from_scores(&scores, &mask, mode, rng)
}

/// A trained model driving rollouts.
#[derive(Debug, Clone, Copy)]
pub struct ModelAgent<'a> {
    pub bundle: &'a ModelBundle,
    pub mode: ActionMode,
}

impl Agent for ModelAgent<'_> {
    fn act(
        &mut self,
        state: &InteractionState,
        _last_sentiment: f64,
        rng: &mut SplitMix64,
    ) -> Result<Stage> {
        select_action(self.bundle, state, self.mode, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(s: usize) -> StageMask {
        valid_actions(Stage::new(s, 6).unwrap(), 6).unwrap()
    }

    #[test]
    fn greedy_ties_go_low() {
        let mut rng = SplitMix64::new(0);
        let s = select_from_scores(&[9.0; 6], &mask(1), ActionMode::Greedy, &mut rng).unwrap();
        assert_eq!(s.index(), 1);
    }

    #[test]
    fn greedy_argmax_in_mask() {
        let mut rng = SplitMix64::new(0);
        let q = [100.0, 100.0, 0.0, 0.0, 2.0, 7.0];
        let s = select_from_scores(&q, &mask(6), ActionMode::Greedy, &mut rng).unwrap();
        assert_eq!(s.index(), 6);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = SplitMix64::new(123);
        let mut counts = [0usize; 6];
        let draws = 100_000;
        for _ in 0..draws {
            let s = select_from_scores(&[0.0; 6], &mask(2), ActionMode::Sample, &mut rng).unwrap();
            counts[s.offset()] += 1;
        }
        for c in &counts[..3] {
            let f = *c as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
        assert_eq!(&counts[3..], &[0, 0, 0]);
    }
}
