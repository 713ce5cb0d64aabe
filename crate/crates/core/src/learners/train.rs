use std::collections::BTreeMap;

use crate::config::hash_json;
use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::{optimizer_step, Mlp, OptimizerState};
use crate::rng::{derive_seed, SplitMix64};

use super::losses::{
    awac_policy_loss, bc_loss, cql_loss, iql_q_loss, iql_value_loss, Batch, LossOutput,
};
use super::{Algo, LearnerConfig, ModelBundle};

/// Mean per-batch losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub phase: String,
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub bundle: ModelBundle,
    pub log: Vec<EpochLoss>,
}

/// Freshly initialized networks for `config.algo`, drawn in the order
/// policy, q, v from the run's seeded generator.
pub fn init_bundle(
    n_stages: usize,
    obs_dim: usize,
    window_k: usize,
    config: &LearnerConfig,
    data_hash: String,
) -> ModelBundle {
    let input = window_k * obs_dim + n_stages;
    let mut rng = SplitMix64::new(derive_seed(config.seed, 0));
    let h = config.hidden;
    let head =
        |out: usize, rng: &mut SplitMix64| Mlp::init(&Mlp::standard_dims(input, out, h), rng);
    let (policy, q, v) = match config.algo {
        Algo::Bc => (Some(head(n_stages, &mut rng)), None, None),
        Algo::Cql => {
            let p = head(n_stages, &mut rng);
            (Some(p), Some(head(n_stages, &mut rng)), None)
        }
        Algo::IqlAwac => {
            let p = head(n_stages, &mut rng);
            let q = head(n_stages, &mut rng);
            (Some(p), Some(q), Some(head(1, &mut rng)))
        }
    };
    ModelBundle {
        algo: config.algo,
        n_stages,
        obs_dim,
        window_k,
        learner: config.clone(),
        data_hash,
        provenance: BTreeMap::new(),
        policy,
        q,
        v,
    }
}

struct Optimized {
    net: Mlp,
    opt: OptimizerState,
}

impl Optimized {
    fn new(net: Mlp, config: &LearnerConfig) -> Self {
        let opt = OptimizerState::new(&net, config.optimizer);
        Self { net, opt }
    }

    fn apply(&mut self, out: &LossOutput) -> Result<()> {
        optimizer_step(&mut self.net, &out.grads, &mut self.opt)
    }
}

struct Progress<'a> {
    bundle: &'a ModelBundle,
    epoch: usize,
    step: usize,
}

impl Progress<'_> {
    fn check(&self, what: &str, out: &LossOutput) -> Result<()> {
        if out.loss.is_finite() && out.grads.is_finite() {
            return Ok(());
        }
        Err(Error::TrainingDiverged {
            what: format!("{what} loss"),
            epoch: self.epoch,
            step: self.step,
            last_good: Box::new(self.bundle.clone()),
        })
    }
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut SplitMix64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Train `config.algo` on `data`. Deterministic for a fixed seed.
///
/// CQL first fits a BC reference policy for `epochs` epochs, then trains Q
/// for another `epochs` epochs. IQL+AWAC updates V, then Q, then the policy
/// on every batch. Target networks are hard-synced every
/// `target_sync_every` Q updates.
pub fn train(data: &OfflineDataset, config: &LearnerConfig) -> Result<TrainOutput> {
    config.validate()?;
    let data_hash = hash_json(&data.provenance);
    let mut bundle = init_bundle(
        data.n_stages,
        data.obs_dim,
        data.window_k,
        config,
        data_hash,
    );
    let mut log = Vec::new();
    if config.epochs == 0 {
        return Ok(TrainOutput { bundle, log });
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("training on an empty dataset"));
    }
    data.validate()?;
    let all = Batch::from_records(&data.records, data.n_stages)?;
    let mut shuffle = SplitMix64::new(derive_seed(config.seed, 1));

    match config.algo {
        Algo::Bc => {
            let policy = bundle.policy.take().expect("initialized");
            let policy = fit_bc(
                policy,
                &all,
                config,
                &mut shuffle,
                &mut bundle,
                &mut log,
                "bc",
            )?;
            bundle.policy = Some(policy);
        }
        Algo::Cql => {
            let policy = bundle.policy.take().expect("initialized");
            let policy = fit_bc(
                policy,
                &all,
                config,
                &mut shuffle,
                &mut bundle,
                &mut log,
                "cql_bc",
            )?;
            bundle.policy = Some(policy);
            let mut q = Optimized::new(bundle.q.take().expect("initialized"), config);
            let mut target = q.net.clone();
            let mut updates = 0usize;
            for epoch in 0..config.epochs {
                let checkpoint = ModelBundle {
                    q: Some(q.net.clone()),
                    ..bundle.clone()
                };
                let mut sum = 0.0;
                let batches = epoch_batches(all.len(), config.batch_size, &mut shuffle);
                for (step, idx) in batches.iter().enumerate() {
                    let batch = all.select(idx);
                    let out = cql_loss(&q.net, &target, bundle.policy.as_ref(), &batch, config)?;
                    Progress {
                        bundle: &checkpoint,
                        epoch,
                        step,
                    }
                    .check("cql", &out)?;
                    q.apply(&out)?;
                    sum += out.loss;
                    updates += 1;
                    if updates.is_multiple_of(config.target_sync_every) {
                        target = q.net.clone();
                    }
                }
                log.push(EpochLoss {
                    phase: "cql".into(),
                    epoch,
                    losses: BTreeMap::from([("q".to_string(), mean(sum, batches.len()))]),
                });
            }
            bundle.q = Some(q.net);
        }
        Algo::IqlAwac => {
            let mut policy = Optimized::new(bundle.policy.take().expect("initialized"), config);
            let mut q = Optimized::new(bundle.q.take().expect("initialized"), config);
            let mut v = Optimized::new(bundle.v.take().expect("initialized"), config);
            let mut target = q.net.clone();
            let mut updates = 0usize;
            for epoch in 0..config.epochs {
                let checkpoint = ModelBundle {
                    policy: Some(policy.net.clone()),
                    q: Some(q.net.clone()),
                    v: Some(v.net.clone()),
                    ..bundle.clone()
                };
                let mut sums = [0.0; 3];
                let batches = epoch_batches(all.len(), config.batch_size, &mut shuffle);
                for (step, idx) in batches.iter().enumerate() {
                    let batch = all.select(idx);
                    let progress = Progress {
                        bundle: &checkpoint,
                        epoch,
                        step,
                    };

                    let out = iql_value_loss(&v.net, &target, &batch, config)?;
                    progress.check("value", &out)?;
                    v.apply(&out)?;
                    sums[0] += out.loss;

                    let out = iql_q_loss(&q.net, &v.net, &batch, config)?;
                    progress.check("q", &out)?;
                    q.apply(&out)?;
                    sums[1] += out.loss;

                    let out = awac_policy_loss(&policy.net, &target, &v.net, &batch, config)?;
                    progress.check("policy", &out)?;
                    policy.apply(&out)?;
                    sums[2] += out.loss;

                    updates += 1;
                    if updates.is_multiple_of(config.target_sync_every) {
                        target = q.net.clone();
                    }
                }
                let nb = batches.len();
                log.push(EpochLoss {
                    phase: "iql_awac".into(),
                    epoch,
                    losses: BTreeMap::from([
                        ("value".to_string(), mean(sums[0], nb)),
                        ("q".to_string(), mean(sums[1], nb)),
                        ("policy".to_string(), mean(sums[2], nb)),
                    ]),
                });
            }
            bundle.policy = Some(policy.net);
            bundle.q = Some(q.net);
            bundle.v = Some(v.net);
        }
    }
    Ok(TrainOutput { bundle, log })
}

fn fit_bc(
    policy: Mlp,
    all: &Batch,
    config: &LearnerConfig,
    shuffle: &mut SplitMix64,
    bundle: &mut ModelBundle,
    log: &mut Vec<EpochLoss>,
    phase: &str,
) -> Result<Mlp> {
    let mut policy = Optimized::new(policy, config);
    for epoch in 0..config.epochs {
        let checkpoint = ModelBundle {
            policy: Some(policy.net.clone()),
            ..bundle.clone()
        };
        let mut sum = 0.0;
        let batches = epoch_batches(all.len(), config.batch_size, shuffle);
        for (step, idx) in batches.iter().enumerate() {
            let out = bc_loss(&policy.net, &all.select(idx))?;
            Progress {
                bundle: &checkpoint,
                epoch,
                step,
            }
            .check(phase, &out)?;
            policy.apply(&out)?;
            sum += out.loss;
        }
        log.push(EpochLoss {
            phase: phase.into(),
            epoch,
            losses: BTreeMap::from([("policy".to_string(), mean(sum, batches.len()))]),
        });
    }
    Ok(policy.net)
}
