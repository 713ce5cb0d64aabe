use crate::error::{Error, Result};
use crate::mdp::{valid_actions, Stage, StageMask, TransitionRecord};
use crate::nn::{masked_log_softmax, Mlp};

use super::LearnerConfig;

/// Flattened minibatch: network inputs, masks and targets per record.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub next_inputs: Vec<Vec<f64>>,
    pub masks: Vec<StageMask>,
    pub next_masks: Vec<StageMask>,
    pub actions: Vec<Stage>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a TransitionRecord>,
        n_stages: usize,
    ) -> Result<Self> {
        let mut b = Batch {
            inputs: Vec::new(),
            next_inputs: Vec::new(),
            masks: Vec::new(),
            next_masks: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        };
        for r in records {
            let mask = valid_actions(r.state.prev_stage, n_stages)?;
            if !mask.contains(r.action) {
                return Err(Error::DataIntegrity(format!(
                    "action {} outside mask of stage {}",
                    r.action, r.state.prev_stage
                )));
            }
            b.inputs.push(r.state.flatten(n_stages));
            b.next_inputs.push(r.next_state.flatten(n_stages));
            b.masks.push(mask);
            b.next_masks
                .push(valid_actions(r.next_state.prev_stage, n_stages)?);
            b.actions.push(r.action);
            b.rewards.push(r.reward);
            b.dones.push(r.done);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Copy out the rows at `indices`.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            next_inputs: indices
                .iter()
                .map(|&i| self.next_inputs[i].clone())
                .collect(),
            masks: indices.iter().map(|&i| self.masks[i]).collect(),
            next_masks: indices.iter().map(|&i| self.next_masks[i]).collect(),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            dones: indices.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    fn nonempty(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyInput("loss over an empty batch"));
        }
        Ok(self.len() as f64)
    }

    fn checked_action(&self, i: usize) -> Result<usize> {
        let a = self.actions[i];
        if !self.masks[i].contains(a) {
            return Err(Error::DataIntegrity(format!(
                "action {a} outside the mask of row {i}"
            )));
        }
        Ok(a.offset())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Mlp,
}

fn max_over_mask(values: &[f64], mask: &StageMask) -> f64 {
    mask.iter()
        .map(|s| values[s.offset()])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mean negative log-likelihood of the data action under the masked policy.
pub fn bc_loss(policy: &Mlp, batch: &Batch) -> Result<LossOutput> {
    let n = batch.nonempty()?;
    let mut grads = policy.zeros_like();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let a = batch.checked_action(i)?;
        let cache = policy.forward_cached(&batch.inputs[i])?;
        let logp = masked_log_softmax(cache.output(), &batch.masks[i])?;
        loss -= logp[a];
        let upstream: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, lp)| (lp.exp() - if j == a { 1.0 } else { 0.0 }) / n)
            .collect();
        policy.backward_into(&cache, &upstream, &mut grads)?;
    }
    Ok(LossOutput {
        loss: loss / n,
        grads,
    })
}

/// TD error against a target network, plus the masked log-sum-exp penalty
/// and a KL pull of the Q-induced softmax toward a frozen BC policy.
pub fn cql_loss(
    q: &Mlp,
    q_target: &Mlp,
    bc_policy: Option<&Mlp>,
    batch: &Batch,
    config: &LearnerConfig,
) -> Result<LossOutput> {
    let n = batch.nonempty()?;
    let bc_policy = match (bc_policy, config.kl_weight > 0.0) {
        (Some(p), _) => Some(p),
        (None, false) => None,
        (None, true) => {
            return Err(Error::Config(
                "cql with kl_weight > 0 needs a trained BC policy".into(),
            ))
        }
    };
    let tau = config.cql_temperature;
    let mut grads = q.zeros_like();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let a = batch.checked_action(i)?;
        let mask = &batch.masks[i];
        let cache = q.forward_cached(&batch.inputs[i])?;
        let qs = cache.output();
        let mut upstream = vec![0.0; qs.len()];

        let bootstrap = if batch.dones[i] {
            0.0
        } else {
            max_over_mask(
                &q_target.forward(&batch.next_inputs[i])?,
                &batch.next_masks[i],
            )
        };
        let y = batch.rewards[i] + config.gamma * bootstrap;
        let td = qs[a] - y;
        loss += td * td;
        upstream[a] += 2.0 * td / n;

        let scaled: Vec<f64> = qs.iter().map(|v| v / tau).collect();
        let logp = masked_log_softmax(&scaled, mask)?;
        // tau * logsumexp(Q/tau) - Q(s,a); logsumexp = Q_a/tau - logp_a
        let penalty = tau * (scaled[a] - logp[a]) - qs[a];
        loss += config.cql_alpha * penalty;
        for s in mask.iter() {
            let j = s.offset();
            let onehot = if j == a { 1.0 } else { 0.0 };
            upstream[j] += config.cql_alpha * (logp[j].exp() - onehot) / n;
        }

        if let Some(bc) = bc_policy {
            let log_bc = masked_log_softmax(&bc.forward(&batch.inputs[i])?, mask)?;
            let kl: f64 = mask
                .iter()
                .map(|s| {
                    let j = s.offset();
                    logp[j].exp() * (logp[j] - log_bc[j])
                })
                .sum();
            loss += config.kl_weight * kl;
            for s in mask.iter() {
                let j = s.offset();
                let p = logp[j].exp();
                upstream[j] += config.kl_weight * p * (logp[j] - log_bc[j] - kl) / (tau * n);
            }
        }
        q.backward_into(&cache, &upstream, &mut grads)?;
    }
    Ok(LossOutput {
        loss: loss / n,
        grads,
    })
}

/// Expectile weight `|tau_e - 1{delta < 0}|`.
pub(crate) fn expectile_weight(delta: f64, expectile: f64) -> f64 {
    if delta < 0.0 {
        1.0 - expectile
    } else {
        expectile
    }
}

/// Asymmetric squared error of `V(s)` against the target `Q(s, a)`.
pub fn iql_value_loss(
    v: &Mlp,
    q_target: &Mlp,
    batch: &Batch,
    config: &LearnerConfig,
) -> Result<LossOutput> {
    let n = batch.nonempty()?;
    let mut grads = v.zeros_like();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let a = batch.checked_action(i)?;
        let target = q_target.forward(&batch.inputs[i])?[a];
        let cache = v.forward_cached(&batch.inputs[i])?;
        let delta = target - cache.output()[0];
        let w = expectile_weight(delta, config.expectile);
        loss += w * delta * delta;
        v.backward_into(&cache, &[-2.0 * w * delta / n], &mut grads)?;
    }
    Ok(LossOutput {
        loss: loss / n,
        grads,
    })
}

/// Squared error of `Q(s, a)` against `r + gamma (1 - done) V(s')`.
pub fn iql_q_loss(q: &Mlp, v: &Mlp, batch: &Batch, config: &LearnerConfig) -> Result<LossOutput> {
    let n = batch.nonempty()?;
    let mut grads = q.zeros_like();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let a = batch.checked_action(i)?;
        let bootstrap = if batch.dones[i] {
            0.0
        } else {
            v.forward(&batch.next_inputs[i])?[0]
        };
        let y = batch.rewards[i] + config.gamma * bootstrap;
        let cache = q.forward_cached(&batch.inputs[i])?;
        let err = cache.output()[a] - y;
        loss += err * err;
        let mut upstream = vec![0.0; q.output_dim()];
        upstream[a] = 2.0 * err / n;
        q.backward_into(&cache, &upstream, &mut grads)?;
    }
    Ok(LossOutput {
        loss: loss / n,
        grads,
    })
}

/// `exp(clamp((Q - V) / lambda))` with the clamp symmetric at `clip`.
pub(crate) fn advantage_weight(advantage: f64, lambda: f64, clip: f64) -> f64 {
    (advantage / lambda).clamp(-clip, clip).exp()
}

/// Advantage-weighted negative log-likelihood of the data action.
pub fn awac_policy_loss(
    policy: &Mlp,
    q: &Mlp,
    v: &Mlp,
    batch: &Batch,
    config: &LearnerConfig,
) -> Result<LossOutput> {
    let n = batch.nonempty()?;
    let mut grads = policy.zeros_like();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let a = batch.checked_action(i)?;
        let advantage = q.forward(&batch.inputs[i])?[a] - v.forward(&batch.inputs[i])?[0];
        let weight = advantage_weight(advantage, config.awac_lambda, config.advantage_clip);
        let cache = policy.forward_cached(&batch.inputs[i])?;
        let logp = masked_log_softmax(cache.output(), &batch.masks[i])?;
        loss -= weight * logp[a];
        let upstream: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, lp)| weight * (lp.exp() - if j == a { 1.0 } else { 0.0 }) / n)
            .collect();
        policy.backward_into(&cache, &upstream, &mut grads)?;
    }
    Ok(LossOutput {
        loss: loss / n,
        grads,
    })
}
