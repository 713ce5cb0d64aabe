//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{
    generate_dataset_with_window, load_dataset, rebalance_transitions, save_dataset,
    BehaviorPolicyKind,
};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::learners::{load_model, save_model, ActionMode, Algo};
use crate::metrics::{compute_report, emit_comparison, ReportFormat, ReportRow};
use crate::pipeline::{
    build_dataset, evaluate_replicates, row, simulate, threads_from_env, train_algo, with_threads,
};
use crate::simulator::{
    load_episode_log, save_episode_log, EpisodeLogHeader, SimPolicy, EPISODE_LOG_VERSION,
};

const DEFAULT_ALPHAS: &str = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
const DEFAULT_CQL_ALPHAS: &str = "0.01,0.1,1,2,3,4,5,6,7,10,100";

#[derive(Debug, Parser)]
#[command(
    name = "stage-planner",
    version,
    about = "Offline RL planner over ordered interaction stages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out a scripted behavior policy into an offline dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// random_adjacent, linear_script, patient_script, mixture or mixture:w1,w2,w3
        #[arg(long)]
        behavior: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Decisions per generated episode.
        #[arg(long)]
        max_turns: Option<usize>,
    },
    /// Top up underrepresented adjacent transitions.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_transition: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Environment to query; defaults to the one recorded in the dataset.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a learner on a dataset file.
    Train {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate episodes with a trained model or a scripted baseline.
    Simulate {
        #[arg(
            long,
            required_unless_present = "baseline",
            conflicts_with = "baseline"
        )]
        model: Option<PathBuf>,
        /// Scripted behavior to simulate instead of a model.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// greedy or sample
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an episode log.
    Report {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Rebuild data, retrain and simulate for each composite-reward weight.
    SweepReward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_ALPHAS)]
        alphas: String,
        #[arg(long, default_value = "iql-awac")]
        algo: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value = "json")]
        format: String,
        /// Directory receiving one report per point plus a summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain CQL for each penalty weight on one dataset and simulate.
    SweepCqlAlpha {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_CQL_ALPHAS)]
        values: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Attach the offending path to I/O failures.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("{what}: `{v}` is not a number")))
        })
        .collect()
}

fn extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn env_from_provenance(data: &crate::dataset::OfflineDataset) -> Result<EnvConfig> {
    let text = data.provenance.get("env_config").ok_or_else(|| {
        Error::Config("dataset does not record its environment; pass --config".into())
    })?;
    serde_json::from_str(text).map_err(|e| Error::Config(format!("recorded env_config: {e}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            out,
            episodes,
            behavior,
            seed,
            max_turns,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = episodes {
                cfg.data.episodes = e;
            }
            if let Some(b) = behavior {
                BehaviorPolicyKind::parse(&b)?;
                cfg.data.behavior = b;
            }
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            if let Some(m) = max_turns {
                cfg.data.max_turns = m;
            }
            cfg.validate()?;
            let mut data = generate_dataset_with_window(
                &cfg.env,
                cfg.data.behavior()?,
                cfg.data.episodes,
                cfg.data.max_turns,
                cfg.reward,
                cfg.data.window_k,
                cfg.data.seed,
            )?;
            data.provenance.insert("config_hash".into(), cfg.hash());
            at(&out, save_dataset(&data, &out))
        }
        Command::Augment {
            input,
            out,
            per_transition,
            seed,
            config,
        } => {
            let data = at(&input, load_dataset(&input))?;
            let env = match config {
                Some(p) => RunConfig::load(&p)?.env,
                None => env_from_provenance(&data)?,
            };
            let augmented = rebalance_transitions(&data, &env, per_transition, seed)?;
            at(&out, save_dataset(&augmented, &out))
        }
        Command::Train {
            algo,
            data,
            config,
            out,
            epochs,
            seed,
        } => {
            let algo = Algo::parse(&algo)?;
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.learner.epochs = e;
            }
            if let Some(s) = seed {
                cfg.learner.seed = s;
            }
            cfg.learner.algo = algo;
            cfg.validate()?;
            let data = at(&data, load_dataset(&data))?;
            let bundle = train_algo(&data, &cfg, algo)?;
            at(&out, save_model(&bundle, &out))
        }
        Command::Simulate {
            model,
            baseline,
            config,
            episodes,
            seed,
            mode,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = episodes {
                cfg.sim.episodes = e;
            }
            if let Some(s) = seed {
                cfg.sim.master_seed = s;
            }
            if let Some(m) = mode {
                cfg.sim.mode = match m.as_str() {
                    "greedy" => ActionMode::Greedy,
                    "sample" => ActionMode::Sample,
                    other => return Err(Error::Usage(format!("unknown mode `{other}`"))),
                };
            }
            cfg.validate()?;
            let bundle = model.as_deref().map(|p| at(p, load_model(p))).transpose()?;
            let policy = match (&bundle, baseline) {
                (Some(b), _) => SimPolicy::Model(b),
                (None, Some(kind)) => SimPolicy::Scripted(BehaviorPolicyKind::parse(&kind)?),
                (None, None) => return Err(Error::Usage("pass --model or --baseline".into())),
            };
            let results = simulate(&policy, &cfg)?;
            let header = EpisodeLogHeader {
                version: EPISODE_LOG_VERSION,
                policy: policy.label(),
                model_hash: policy.hash(),
                config_hash: cfg.hash(),
                env: cfg.env.clone(),
                sim: cfg.sim_config(),
            };
            at(&out, save_episode_log(&header, &results, &out))
        }
        Command::Report {
            episodes,
            format,
            out,
            label,
        } => {
            let format = ReportFormat::parse(&format)?;
            let (header, results) = at(&episodes, load_episode_log(&episodes))?;
            let report = compute_report(&results, header.env.n_stages, &header.sim)?;
            let mut r = ReportRow {
                label: label.unwrap_or(header.policy),
                provenance: Default::default(),
                report,
            };
            r.provenance
                .insert("config_hash".into(), header.config_hash);
            r.provenance
                .insert("master_seed".into(), header.sim.master_seed.to_string());
            r.provenance.insert("model_hash".into(), header.model_hash);
            write_out(out.as_deref(), &emit_comparison(&[r], format)?)
        }
        Command::SweepReward {
            config,
            alphas,
            algo,
            seeds,
            format,
            out,
        } => {
            let format = ReportFormat::parse(&format)?;
            let algo = Algo::parse(&algo)?;
            let base = load_config(config.as_deref())?;
            let mut rows = Vec::new();
            for alpha in parse_list(&alphas, "--alphas")? {
                let mut cfg = base.clone();
                cfg.reward = crate::reward::RewardWeights::new(alpha)?;
                cfg.validate()?;
                let data = build_dataset(&cfg)?;
                let (report, _) = evaluate_replicates(&data, &cfg, algo, seeds)?;
                let mut r = row(format!("{} alpha={alpha}", algo.name()), &cfg, report);
                r.provenance.insert("alpha".into(), alpha.to_string());
                r.provenance.insert("replicates".into(), seeds.to_string());
                rows.push(r);
            }
            write_sweep(&out, "alpha", &rows, format)
        }
        Command::SweepCqlAlpha {
            config,
            values,
            seeds,
            format,
            out,
        } => {
            let format = ReportFormat::parse(&format)?;
            let base = load_config(config.as_deref())?;
            base.validate()?;
            let data = build_dataset(&base)?;
            let mut rows = Vec::new();
            for value in parse_list(&values, "--values")? {
                let mut cfg = base.clone();
                cfg.learner.cql_alpha = value;
                cfg.validate()?;
                let (report, _) = evaluate_replicates(&data, &cfg, Algo::Cql, seeds)?;
                let mut r = row(format!("cql cql_alpha={value}"), &cfg, report);
                r.provenance.insert("cql_alpha".into(), value.to_string());
                r.provenance.insert("replicates".into(), seeds.to_string());
                rows.push(r);
            }
            write_sweep(&out, "cql_alpha", &rows, format)
        }
    }
}

fn write_sweep(dir: &Path, key: &str, rows: &[ReportRow], format: ReportFormat) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = extension(format);
    for r in rows {
        let name = format!("{key}-{}.{ext}", r.provenance[key]);
        std::fs::write(
            dir.join(name),
            emit_comparison(std::slice::from_ref(r), format)?,
        )?;
    }
    std::fs::write(
        dir.join(format!("summary.{ext}")),
        emit_comparison(rows, format)?,
    )?;
    Ok(())
}

fn report_error(e: &Error) {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!(
        "stage-planner: error kind={} code={} msg={msg}",
        e.kind(),
        e.exit_code()
    );
}

/// Parse `argv` (program name first), run the command and return the process
/// exit code: 0 on success, 1 on usage errors, 2 on data or config errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            report_error(&Error::Usage(
                first.trim_start_matches("error: ").to_string(),
            ));
            return 1;
        }
    };
    let result = threads_from_env().and_then(|n| with_threads(n, || run(cli.command))?);
    match result {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}
