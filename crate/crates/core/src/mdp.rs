//! Stage ordinals, adjacency masks, the sliding-window interaction state and
//! transition records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::SentimentLogits;

pub const DEFAULT_N_STAGES: usize = 6;
pub const DEFAULT_OBS_DIM: usize = 8;
pub const DEFAULT_WINDOW_K: usize = 4;

/// A 1-based stage ordinal. The upper bound is checked at construction
/// against the configured stage count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stage(usize);

impl Stage {
    pub fn new(index: usize, n_stages: usize) -> Result<Self> {
        if index == 0 || index > n_stages {
            return Err(Error::InvalidStage {
                stage: index as i64,
                n_stages,
            });
        }
        Ok(Self(index))
    }

    /// The first stage; valid for every stage count.
    pub const FIRST: Stage = Stage(1);

    pub fn index(self) -> usize {
        self.0
    }

    /// Zero-based position, for indexing network outputs.
    pub fn offset(self) -> usize {
        self.0 - 1
    }

    pub(crate) fn from_offset(offset: usize) -> Self {
        Self(offset + 1)
    }

    pub fn check(self, n_stages: usize) -> Result<Self> {
        Stage::new(self.0, n_stages)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Legal successor stages of a given stage: the contiguous run
/// `{s-1, s, s+1}` clipped to `[1, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageMask {
    lo: usize,
    hi: usize,
    n_stages: usize,
}

impl StageMask {
    pub fn contains(&self, stage: Stage) -> bool {
        (self.lo..=self.hi).contains(&stage.index())
    }

    pub fn contains_offset(&self, offset: usize) -> bool {
        self.contains(Stage::from_offset(offset))
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    /// Allowed stages in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = Stage> {
        (self.lo..=self.hi).map(Stage)
    }

    pub fn to_vec(&self) -> Vec<usize> {
        (self.lo..=self.hi).collect()
    }

    /// Boolean mask over zero-based output positions.
    pub fn as_bools(&self) -> Vec<bool> {
        (1..=self.n_stages)
            .map(|s| (self.lo..=self.hi).contains(&s))
            .collect()
    }
}

/// Stages reachable from `current` in one decision.
pub fn valid_actions(current: Stage, n_stages: usize) -> Result<StageMask> {
    if n_stages < 2 {
        return Err(Error::Config(format!(
            "n_stages must be at least 2, got {n_stages}"
        )));
    }
    let s = current.check(n_stages)?.index();
    Ok(StageMask {
        lo: s.saturating_sub(1).max(1),
        hi: (s + 1).min(n_stages),
        n_stages,
    })
}

/// One environment-emitted feature vector standing in for an utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationVector(pub Vec<f64>);

impl ObservationVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The planner's view at a decision step: the `K` most recent observations
/// (oldest first) and the stage chosen at the previous step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionState {
    pub window: Vec<ObservationVector>,
    pub prev_stage: Stage,
}

impl InteractionState {
    /// Zero-padded window, previous stage 1.
    pub fn initial(window_k: usize, obs_dim: usize) -> Self {
        Self {
            window: vec![ObservationVector::zeros(obs_dim); window_k],
            prev_stage: Stage::FIRST,
        }
    }

    pub fn window_k(&self) -> usize {
        self.window.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.window.first().map_or(0, ObservationVector::dim)
    }

    /// Check that the window has `window_k` vectors of dimension `obs_dim`,
    /// all finite, and that the previous stage is in range.
    pub fn validate(&self, window_k: usize, obs_dim: usize, n_stages: usize) -> Result<()> {
        if self.window.len() != window_k {
            return Err(Error::Shape {
                what: "window length",
                expected: window_k,
                got: self.window.len(),
            });
        }
        for obs in &self.window {
            if obs.dim() != obs_dim {
                return Err(Error::Shape {
                    what: "observation dimension",
                    expected: obs_dim,
                    got: obs.dim(),
                });
            }
            if !obs.is_finite() {
                return Err(Error::Numeric("non-finite observation component".into()));
            }
        }
        self.prev_stage.check(n_stages)?;
        Ok(())
    }

    /// Slide the window forward by one observation and record `chosen` as the
    /// new previous stage. `self` is left untouched.
    pub fn push_observation(
        &self,
        obs: ObservationVector,
        chosen: Stage,
        n_stages: usize,
    ) -> Result<Self> {
        let dim = self.obs_dim();
        if obs.dim() != dim {
            return Err(Error::Shape {
                what: "observation dimension",
                expected: dim,
                got: obs.dim(),
            });
        }
        if !obs.is_finite() {
            return Err(Error::Numeric("non-finite observation component".into()));
        }
        let mask = valid_actions(self.prev_stage, n_stages)?;
        let chosen = chosen.check(n_stages)?;
        if !mask.contains(chosen) {
            return Err(Error::MaskViolation {
                from: self.prev_stage.index(),
                to: chosen.index(),
            });
        }
        let mut window = Vec::with_capacity(self.window.len());
        window.extend(self.window.iter().skip(1).cloned());
        window.push(obs);
        Ok(Self {
            window,
            prev_stage: chosen,
        })
    }

    /// Window vectors concatenated oldest first, followed by a one-hot of the
    /// previous stage. Length `K*D + N`.
    pub fn flatten(&self, n_stages: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.window.len() * self.obs_dim() + n_stages);
        for obs in &self.window {
            out.extend_from_slice(obs.as_slice());
        }
        let base = out.len();
        out.resize(base + n_stages, 0.0);
        out[base + self.prev_stage.offset()] = 1.0;
        out
    }
}

/// Free-function form of [`InteractionState::push_observation`].
pub fn push_observation(
    state: &InteractionState,
    obs: ObservationVector,
    chosen: Stage,
    n_stages: usize,
) -> Result<InteractionState> {
    state.push_observation(obs, chosen, n_stages)
}

/// Free-function form of [`InteractionState::flatten`].
pub fn flatten_state(state: &InteractionState, n_stages: usize) -> Vec<f64> {
    state.flatten(n_stages)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: InteractionState,
    pub action: Stage,
    pub reward: f64,
    pub next_state: InteractionState,
    pub done: bool,
    pub sentiment: SentimentLogits,
}

impl TransitionRecord {
    pub fn validate(&self, n_stages: usize) -> Result<()> {
        let mask = valid_actions(self.state.prev_stage, n_stages)?;
        if !mask.contains(self.action.check(n_stages)?) {
            return Err(Error::MaskViolation {
                from: self.state.prev_stage.index(),
                to: self.action.index(),
            });
        }
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::DataIntegrity(format!(
                "reward {} outside [0, 1]",
                self.reward
            )));
        }
        if self.next_state.prev_stage != self.action {
            return Err(Error::DataIntegrity(format!(
                "next_state.prev_stage {} != action {}",
                self.next_state.prev_stage, self.action
            )));
        }
        Ok(())
    }
}

/// A chained sequence of transitions from one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<TransitionRecord>,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn validate(&self, n_stages: usize) -> Result<()> {
        let last = self.records.len().saturating_sub(1);
        for (i, rec) in self.records.iter().enumerate() {
            rec.validate(n_stages)?;
            if rec.done && i != last {
                return Err(Error::DataIntegrity(format!(
                    "record {i} is terminal but not last"
                )));
            }
        }
        for (i, pair) in self.records.windows(2).enumerate() {
            if pair[0].next_state != pair[1].state {
                return Err(Error::DataIntegrity(format!(
                    "records {i} and {} do not chain",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(i: usize) -> Stage {
        Stage::new(i, 12).unwrap()
    }

    fn obs(v: f64) -> ObservationVector {
        ObservationVector(vec![v; 8])
    }

    #[test]
    fn stage_range_enforced() {
        assert!(Stage::new(0, 6).is_err());
        assert!(Stage::new(7, 6).is_err());
        assert_eq!(Stage::new(6, 6).unwrap().index(), 6);
    }

    #[test]
    fn valid_actions_examples() {
        assert_eq!(valid_actions(st(2), 6).unwrap().to_vec(), vec![1, 2, 3]);
        assert_eq!(valid_actions(st(1), 6).unwrap().to_vec(), vec![1, 2]);
        assert_eq!(valid_actions(st(6), 6).unwrap().to_vec(), vec![5, 6]);
        assert!(matches!(
            valid_actions(st(7), 6),
            Err(Error::InvalidStage { .. })
        ));
    }

    #[test]
    fn mask_closure_and_symmetry_exhaustive() {
        for n in 2..=12 {
            for s in 1..=n {
                let mask = valid_actions(st(s), n).unwrap();
                let expect_len = if s == 1 || s == n { 2 } else { 3 };
                assert_eq!(mask.len(), expect_len);
                for a in mask.iter() {
                    assert!(a.index().abs_diff(s) <= 1);
                    assert!(valid_actions(a, n).unwrap().contains(st(s)));
                }
                for a in 1..=n {
                    let inside = mask.contains(st(a));
                    assert_eq!(inside, a.abs_diff(s) <= 1);
                }
            }
        }
    }

    #[test]
    fn push_fifo() {
        let mut s = InteractionState::initial(4, 8);
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            s = s
                .push_observation(obs(v), st(if i < 2 { i + 2 } else { 3 }), 6)
                .unwrap();
        }
        // window [a,b,c,d], prev 3 -> push e with 3
        let before = s.clone();
        let next = s.push_observation(obs(5.0), st(3), 6).unwrap();
        assert_eq!(before, s, "input must be unmodified");
        let firsts: Vec<f64> = next.window.iter().map(|o| o.0[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(next.prev_stage, st(3));
    }

    #[test]
    fn push_from_fresh_state_pads() {
        let s = InteractionState::initial(4, 8);
        let next = s.push_observation(obs(7.0), st(2), 6).unwrap();
        assert!(next.window[..3]
            .iter()
            .all(|o| o.0.iter().all(|&v| v == 0.0)));
        assert_eq!(next.window[3], obs(7.0));
        assert_eq!(next.prev_stage, st(2));
    }

    #[test]
    fn push_rejects_illegal_stage_and_bad_dim() {
        let s = InteractionState::initial(4, 8)
            .push_observation(obs(1.0), st(2), 6)
            .unwrap();
        assert!(matches!(
            s.push_observation(obs(1.0), st(6), 6),
            Err(Error::MaskViolation { from: 2, to: 6 })
        ));
        assert!(matches!(
            s.push_observation(ObservationVector(vec![0.0; 3]), st(2), 6),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn flatten_layout() {
        let s = InteractionState::initial(4, 8);
        let flat = s.flatten(6);
        assert_eq!(flat.len(), 38);
        let nonzero: Vec<usize> = flat
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![32]);
        assert_eq!(flat[32], 1.0);

        let s3 = InteractionState {
            prev_stage: st(3),
            ..s
        };
        assert_eq!(&s3.flatten(6)[32..], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn push_preserves_window_length(
            k in 1usize..6,
            steps in prop::collection::vec((any::<u8>(), -5.0f64..5.0), 0..40)
        ) {
            let mut s = InteractionState::initial(k, 3);
            for (choice, v) in steps {
                let mask = valid_actions(s.prev_stage, 6).unwrap().to_vec();
                let a = mask[choice as usize % mask.len()];
                s = s.push_observation(ObservationVector(vec![v; 3]), st(a), 6).unwrap();
                prop_assert_eq!(s.window_k(), k);
            }
        }

        #[test]
        fn flatten_injective(
            a in prop::collection::vec(-1.0f64..1.0, 8),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            sa in 1usize..=6,
            sb in 1usize..=6,
        ) {
            let mk = |v: &Vec<f64>, s: usize| InteractionState {
                window: vec![ObservationVector::zeros(4), ObservationVector(v[..4].to_vec()), ObservationVector(v[4..].to_vec())],
                prev_stage: st(s),
            };
            let (x, y) = (mk(&a, sa), mk(&b, sb));
            prop_assert_eq!(x == y, x.flatten(6) == y.flatten(6));
        }
    }
}
