//! End-to-end steps shared by the command line and the benchmark tests:
//! build the offline dataset, train, simulate, summarize.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::dataset::{generate_dataset_with_window, rebalance_transitions, OfflineDataset};
use crate::error::{Error, Result};
use crate::learners::{train, Algo, ModelBundle};
use crate::metrics::{compute_report, MetricsReport, ReportRow};
use crate::simulator::{run_batch, EpisodeResult, SimPolicy};

/// Environment variable capping the worker count (0 or unset = automatic).
pub const THREADS_ENV: &str = "STAGE_PLANNER_THREADS";

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Usage(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        }),
    }
}

/// Run `f` on a dedicated pool of `threads` workers (0 = one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Generate the behavior dataset described by `cfg.data` and rebalance its
/// adjacent transitions to `cfg.data.augment_per_transition`.
pub fn build_dataset(cfg: &RunConfig) -> Result<OfflineDataset> {
    let d = &cfg.data;
    let mut data = generate_dataset_with_window(
        &cfg.env,
        d.behavior()?,
        d.episodes,
        d.max_turns,
        cfg.reward,
        d.window_k,
        d.seed,
    )?;
    if d.augment_per_transition > 0 {
        data = rebalance_transitions(&data, &cfg.env, d.augment_per_transition, d.augment_seed)?;
    }
    data.provenance.insert("config_hash".into(), cfg.hash());
    Ok(data)
}

pub fn train_algo(data: &OfflineDataset, cfg: &RunConfig, algo: Algo) -> Result<ModelBundle> {
    let learner = crate::learners::LearnerConfig {
        algo,
        ..cfg.learner.clone()
    };
    let mut bundle = train(data, &learner)?.bundle;
    bundle.provenance.insert("config_hash".into(), cfg.hash());
    bundle
        .provenance
        .insert("seed".into(), learner.seed.to_string());
    Ok(bundle)
}

pub fn simulate(policy: &SimPolicy<'_>, cfg: &RunConfig) -> Result<Vec<EpisodeResult>> {
    run_batch(policy, &cfg.env, &cfg.sim_config())
}

pub fn summarize(results: &[EpisodeResult], cfg: &RunConfig) -> Result<MetricsReport> {
    compute_report(results, cfg.env.n_stages, &cfg.sim_config())
}

/// Copy of `cfg` for replicate `index`: learner seed and simulation master
/// seed are both offset by the index.
pub fn replicate(cfg: &RunConfig, index: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.learner.seed = cfg.learner.seed.wrapping_add(index);
    c.sim.master_seed = cfg.sim.master_seed.wrapping_add(index);
    c
}

/// Train `algo` once per replicate on a shared dataset and pool every
/// replicate's episodes into one report.
pub fn evaluate_replicates(
    data: &OfflineDataset,
    cfg: &RunConfig,
    algo: Algo,
    replicates: u64,
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    if replicates == 0 {
        return Err(Error::Usage("at least one replicate is required".into()));
    }
    let mut pooled = Vec::new();
    let mut per = Vec::new();
    for i in 0..replicates {
        let c = replicate(cfg, i);
        let bundle = train_algo(data, &c, algo)?;
        let results = simulate(&SimPolicy::Model(&bundle), &c)?;
        per.push(summarize(&results, &c)?);
        pooled.extend(results);
    }
    Ok((summarize(&pooled, cfg)?, per))
}

/// Standard provenance for a report row.
pub fn row(label: impl Into<String>, cfg: &RunConfig, report: MetricsReport) -> ReportRow {
    let mut provenance = BTreeMap::new();
    provenance.insert("config_hash".into(), cfg.hash());
    provenance.insert("master_seed".into(), cfg.sim.master_seed.to_string());
    ReportRow {
        label: label.into(),
        provenance,
        report,
    }
}
