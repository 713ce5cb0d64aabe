//! Synthetic stage-conditioned responder.
//!
//! A hidden trust level in `[0, 1]` is compared against a per-stage threshold.
//! Acting at a stage whose threshold is at or below the current trust earns
//! positive sentiment and builds trust; acting above it earns negative
//! sentiment and erodes trust in proportion to the relative shortfall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ObservationVector, Stage, DEFAULT_N_STAGES, DEFAULT_OBS_DIM};
use crate::reward::{sentiment_reward, SentimentLogits};
use crate::rng::SplitMix64;

const THRESHOLD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_stages: usize,
    pub obs_dim: usize,
    pub trust_gain: f64,
    pub trust_loss: f64,
    /// Per-stage trust thresholds; `None` means the linear ramp `(s-1)/N`.
    pub thresholds: Option<Vec<f64>>,
    pub sentiment_gain: f64,
    pub noise_std: f64,
    pub neutral_bias: f64,
    pub initial_trust: f64,
    /// Seeds the fixed sentiment direction in observation space.
    pub feature_seed: u64,
    /// Optional environment-side turn cap; only sets `terminal_hint`.
    pub turn_cap: Option<u64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_stages: DEFAULT_N_STAGES,
            obs_dim: DEFAULT_OBS_DIM,
            trust_gain: 0.08,
            trust_loss: 0.12,
            thresholds: None,
            sentiment_gain: 6.0,
            noise_std: 0.3,
            neutral_bias: 0.5,
            initial_trust: 0.1,
            feature_seed: 0,
            turn_cap: None,
        }
    }
}

impl EnvConfig {
    pub fn thresholds(&self) -> Vec<f64> {
        match &self.thresholds {
            Some(t) => t.clone(),
            None => (1..=self.n_stages)
                .map(|s| (s - 1) as f64 / self.n_stages as f64)
                .collect(),
        }
    }

    pub fn threshold(&self, stage: Stage) -> f64 {
        match &self.thresholds {
            Some(t) => t[stage.offset()],
            None => stage.offset() as f64 / self.n_stages as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stages < 2 {
            return bad(format!("env.n_stages must be >= 2, got {}", self.n_stages));
        }
        if self.obs_dim == 0 {
            return bad("env.obs_dim must be >= 1".into());
        }
        let scalars = [
            ("trust_gain", self.trust_gain),
            ("trust_loss", self.trust_loss),
            ("sentiment_gain", self.sentiment_gain),
            ("noise_std", self.noise_std),
            ("neutral_bias", self.neutral_bias),
            ("initial_trust", self.initial_trust),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return bad(format!("env.{name} must be finite"));
            }
        }
        if self.noise_std < 0.0 {
            return bad("env.noise_std must be >= 0".into());
        }
        if self.trust_gain < 0.0 || self.trust_loss < 0.0 {
            return bad("env trust gains must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.initial_trust) {
            return bad("env.initial_trust must lie in [0, 1]".into());
        }
        let t = self.thresholds();
        if t.len() != self.n_stages {
            return bad(format!(
                "env.thresholds has {} entries, expected {}",
                t.len(),
                self.n_stages
            ));
        }
        if t.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return bad("env.thresholds must lie in [0, 1]".into());
        }
        if t.windows(2).any(|w| w[1] < w[0]) {
            return bad("env.thresholds must be nondecreasing".into());
        }
        Ok(())
    }
}

/// Hidden per-episode state. Owns its generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEnvState {
    pub trust: f64,
    pub turn_count: u64,
    pub rng: SplitMix64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub observation: ObservationVector,
    pub sentiment: SentimentLogits,
    pub terminal_hint: bool,
}

/// A validated config with its fixed observation features precomputed.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    thresholds: Vec<f64>,
    prototypes: Vec<Vec<f64>>,
    direction: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// One-hot on coordinate `s mod D`, circularly smoothed by `[1/4, 1/2, 1/4]`,
/// scaled to unit length.
fn prototype(stage: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let c = stage % dim;
    v[c] += 0.5;
    v[(c + 1) % dim] += 0.25;
    v[(c + dim - 1) % dim] += 0.25;
    normalize(&mut v);
    v
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.obs_dim;
        let prototypes = (1..=config.n_stages).map(|s| prototype(s, dim)).collect();
        let mut g = SplitMix64::new(config.feature_seed);
        let mut direction: Vec<f64> = (0..dim).map(|_| g.next_normal()).collect();
        normalize(&mut direction);
        let thresholds = config.thresholds();
        Ok(Self {
            config,
            thresholds,
            prototypes,
            direction,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_stages(&self) -> usize {
        self.config.n_stages
    }

    pub fn threshold(&self, stage: Stage) -> f64 {
        self.thresholds[stage.offset()]
    }

    pub fn reset(&self, seed: u64) -> LatentEnvState {
        self.state_with_trust(self.config.initial_trust, seed)
    }

    /// A fresh latent state at an arbitrary trust level.
    pub fn state_with_trust(&self, trust: f64, seed: u64) -> LatentEnvState {
        LatentEnvState {
            trust: trust.clamp(0.0, 1.0),
            turn_count: 0,
            rng: SplitMix64::new(seed),
        }
    }

    pub fn step(
        &self,
        state: &LatentEnvState,
        action: Stage,
    ) -> Result<(LatentEnvState, EnvStepResult)> {
        let action = action.check(self.config.n_stages)?;
        let cfg = &self.config;
        let theta = self.threshold(action);
        let margin = state.trust - theta;
        let trust = if margin >= 0.0 {
            state.trust + cfg.trust_gain
        } else {
            state.trust - cfg.trust_loss * (-margin) / theta.max(THRESHOLD_EPS)
        }
        .clamp(0.0, 1.0);

        let mut rng = state.rng.clone();
        let eta_pos = cfg.noise_std * rng.next_normal();
        let eta_neg = cfg.noise_std * rng.next_normal();
        let eta_neu = cfg.noise_std * rng.next_normal();
        let sentiment = SentimentLogits {
            l_neg: -cfg.sentiment_gain * margin + eta_neg,
            l_neu: cfg.neutral_bias + eta_neu,
            l_pos: cfg.sentiment_gain * margin + eta_pos,
        };
        let sent = sentiment_reward(&sentiment)?;
        let proto = &self.prototypes[action.offset()];
        let observation: Vec<f64> = proto
            .iter()
            .zip(&self.direction)
            .map(|(p, d)| p + sent * d + cfg.noise_std * rng.next_normal())
            .collect();

        let turn_count = state.turn_count + 1;
        let terminal_hint = cfg.turn_cap.is_some_and(|cap| turn_count >= cap);
        Ok((
            LatentEnvState {
                trust,
                turn_count,
                rng,
            },
            EnvStepResult {
                observation: ObservationVector(observation),
                sentiment,
                terminal_hint,
            },
        ))
    }
}

/// Validate `config` and start an episode.
pub fn env_reset(config: &EnvConfig, seed: u64) -> Result<LatentEnvState> {
    Ok(Environment::new(config.clone())?.reset(seed))
}

/// Single step without a prebuilt [`Environment`].
pub fn env_step(
    state: &LatentEnvState,
    action: Stage,
    config: &EnvConfig,
) -> Result<(LatentEnvState, EnvStepResult)> {
    Environment::new(config.clone())?.step(state, action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{composite_reward, RewardWeights};
    use proptest::prelude::*;

    fn st(i: usize) -> Stage {
        Stage::new(i, 6).unwrap()
    }

    fn quiet() -> EnvConfig {
        EnvConfig {
            noise_std: 0.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_initializes_fields() {
        let s = env_reset(&EnvConfig::default(), 7).unwrap();
        assert_eq!(s.trust, 0.1);
        assert_eq!(s.turn_count, 0);
    }

    #[test]
    fn same_seed_same_stream_different_seed_differs() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let run = |seed| {
            let mut s = env.reset(seed);
            let mut out = Vec::new();
            for a in [2, 3, 3, 2, 1, 2] {
                let (n, r) = env.step(&s, st(a)).unwrap();
                out.push((n.trust, r.observation.clone(), r.sentiment));
                s = n;
            }
            out
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7)[0].1, run(8)[0].1);
    }

    #[test]
    fn noise_free_high_trust_low_stage() {
        let env = Environment::new(quiet()).unwrap();
        let s = env.state_with_trust(0.9, 1);
        let (_, r) = env.step(&s, st(1)).unwrap();
        assert!((r.sentiment.l_pos - 5.4).abs() < 1e-12);
        assert!((r.sentiment.l_neg + 5.4).abs() < 1e-12);
        let sent = sentiment_reward(&r.sentiment).unwrap();
        // logistic(10.8)
        assert!((sent - 0.999_979_600_912_720_1).abs() < 1e-12, "{sent}");
    }

    #[test]
    fn noise_free_premature_advance() {
        let env = Environment::new(quiet()).unwrap();
        let s = env.state_with_trust(0.1, 1);
        let (n, r) = env.step(&s, st(6)).unwrap();
        let m = 0.1 - 5.0 / 6.0;
        assert!((r.sentiment.l_pos - 6.0 * m).abs() < 1e-12);
        assert!((r.sentiment.l_pos + 4.4).abs() < 1e-12);
        assert!(sentiment_reward(&r.sentiment).unwrap() < 0.001);
        assert!(n.trust < 0.1);
    }

    #[test]
    fn zero_margin_is_neutral() {
        let env = Environment::new(quiet()).unwrap();
        let s = env.state_with_trust(1.0 / 6.0, 1);
        let (n, r) = env.step(&s, st(2)).unwrap();
        assert_eq!(sentiment_reward(&r.sentiment).unwrap(), 0.5);
        assert_eq!(n.trust, 1.0 / 6.0 + 0.08);
        assert_eq!(n.turn_count, 1);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let s = env.reset(0);
        assert!(env.step(&s, Stage::new(7, 7).unwrap()).is_err());
        let bad = EnvConfig {
            thresholds: Some(vec![0.0, 0.5, 0.4, 0.6, 0.7, 0.8]),
            ..EnvConfig::default()
        };
        assert!(env_reset(&bad, 0).is_err());
        let neg = EnvConfig {
            noise_std: -1.0,
            ..EnvConfig::default()
        };
        assert!(Environment::new(neg).is_err());
    }

    #[test]
    fn greedy_forward_loses_to_patience() {
        let env = Environment::new(quiet()).unwrap();
        let w = RewardWeights::new(0.8).unwrap();
        let total = |patient: bool| {
            let mut s = env.reset(3);
            let mut stage = 1usize;
            let mut sum = 0.0;
            for _ in 0..30 {
                let next = (stage + 1).min(6);
                let advance = !patient || s.trust >= env.threshold(st(next));
                if advance {
                    stage = next;
                }
                let (n, r) = env.step(&s, st(stage)).unwrap();
                sum += composite_reward(&r.sentiment, st(stage), w, 6).unwrap();
                s = n;
            }
            sum
        };
        let (greedy, patient) = (total(false), total(true));
        assert!(greedy < patient, "greedy {greedy} patient {patient}");
    }

    #[test]
    fn sentiment_monotone_in_margin() {
        let env = Environment::new(quiet()).unwrap();
        let mut last = -1.0;
        for i in 0..=100 {
            let trust = i as f64 / 100.0;
            let (_, r) = env.step(&env.state_with_trust(trust, 0), st(4)).unwrap();
            let s = sentiment_reward(&r.sentiment).unwrap();
            assert!(s > last);
            last = s;
        }
    }

    proptest! {
        #[test]
        fn trust_stays_bounded(seed in any::<u64>(), choices in prop::collection::vec(0u8..3, 1..80)) {
            let env = Environment::new(EnvConfig::default()).unwrap();
            let mut s = env.reset(seed);
            let mut stage = 1usize;
            for c in choices {
                stage = (stage as i64 + c as i64 - 1).clamp(1, 6) as usize;
                let (n, r) = env.step(&s, st(stage)).unwrap();
                prop_assert!((0.0..=1.0).contains(&n.trust));
                prop_assert_eq!(r.observation.dim(), 8);
                s = n;
            }
        }
    }
}
