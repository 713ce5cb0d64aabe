//! Sentiment, distance and composite rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Stage;

/// Three-class logit triple for one responder reply. Serialized as
/// `[l_neg, l_neu, l_pos]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct SentimentLogits {
    pub l_neg: f64,
    pub l_neu: f64,
    pub l_pos: f64,
}

impl From<[f64; 3]> for SentimentLogits {
    fn from([l_neg, l_neu, l_pos]: [f64; 3]) -> Self {
        Self {
            l_neg,
            l_neu,
            l_pos,
        }
    }
}

impl From<SentimentLogits> for [f64; 3] {
    fn from(s: SentimentLogits) -> Self {
        [s.l_neg, s.l_neu, s.l_pos]
    }
}

impl SentimentLogits {
    pub fn new(l_neg: f64, l_neu: f64, l_pos: f64) -> Self {
        Self {
            l_neg,
            l_neu,
            l_pos,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_neg.is_finite() && self.l_neu.is_finite() && self.l_pos.is_finite()
    }

    /// Full three-class softmax, returned as `(pos, neu, neg)`.
    pub fn class_probabilities(&self) -> (f64, f64, f64) {
        let m = self.l_neg.max(self.l_neu).max(self.l_pos);
        let (en, eu, ep) = (
            (self.l_neg - m).exp(),
            (self.l_neu - m).exp(),
            (self.l_pos - m).exp(),
        );
        let z = en + eu + ep;
        (ep / z, eu / z, en / z)
    }
}

/// Convex reward weights; only `alpha` is stored, `beta = 1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardWeightsRepr", into = "RewardWeightsRepr")]
pub struct RewardWeights {
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardWeightsRepr {
    alpha: f64,
}

impl TryFrom<RewardWeightsRepr> for RewardWeights {
    type Error = Error;
    fn try_from(r: RewardWeightsRepr) -> Result<Self> {
        RewardWeights::new(r.alpha)
    }
}

impl From<RewardWeights> for RewardWeightsRepr {
    fn from(w: RewardWeights) -> Self {
        Self { alpha: w.alpha }
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { alpha: 0.8 }
    }
}

impl RewardWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "reward alpha {alpha} outside [0, 1]"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Two-class softmax probability of the positive class; the neutral logit
/// is ignored.
pub fn sentiment_reward(s: &SentimentLogits) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::Numeric("non-finite sentiment logits".into()));
    }
    let m = s.l_neg.max(s.l_pos);
    let ep = (s.l_pos - m).exp();
    let en = (s.l_neg - m).exp();
    Ok(ep / (en + ep))
}

/// Linear ramp from 0 at the first stage to 1 at the last.
pub fn distance_reward(predicted: Stage, n_stages: usize) -> Result<f64> {
    let s = predicted.check(n_stages)?;
    if n_stages < 2 {
        return Err(Error::Config("n_stages must be at least 2".into()));
    }
    Ok((s.index() - 1) as f64 / (n_stages - 1) as f64)
}

pub fn composite_reward(
    s: &SentimentLogits,
    predicted: Stage,
    w: RewardWeights,
    n_stages: usize,
) -> Result<f64> {
    let sent = sentiment_reward(s)?;
    let dist = distance_reward(predicted, n_stages)?;
    Ok(w.alpha() * sent + w.beta() * dist)
}
