use stage_planner::config::RunConfig;
use stage_planner::dataset::{
    generate_dataset, read_dataset, regenerate_from_provenance, write_dataset, BehaviorPolicyKind,
};
use stage_planner::env::EnvConfig;
use stage_planner::learners::{load_model, save_model, train, Algo, LearnerConfig};
use stage_planner::metrics::compute_report;
use stage_planner::pipeline::{build_dataset, with_threads};
use stage_planner::reward::RewardWeights;
use stage_planner::simulator::{run_batch, SimPolicy, SimulationConfig};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.episodes = 30;
    cfg.data.max_turns = 40;
    cfg.data.augment_per_transition = 100;
    cfg.learner.epochs = 2;
    cfg.learner.hidden = 16;
    cfg.sim.episodes = 24;
    cfg
}

#[test]
fn trained_policies_respect_adjacency_and_turn_accounting() {
    let cfg = small_config();
    let data = build_dataset(&cfg).unwrap();
    for algo in [Algo::Bc, Algo::Cql, Algo::IqlAwac] {
        let learner = LearnerConfig {
            algo,
            ..cfg.learner.clone()
        };
        let bundle = train(&data, &learner).unwrap().bundle;
        let sim = cfg.sim_config();
        let results = run_batch(&SimPolicy::Model(&bundle), &cfg.env, &sim).unwrap();
        assert_eq!(results.len(), 24);
        for r in &results {
            let mut prev = 1;
            for s in &r.stage_sequence {
                assert!(s.index().abs_diff(prev) <= 1);
                prev = s.index();
            }
            assert_eq!(r.turn_count, r.stage_sequence.len());
            assert!(r.total_turns() <= sim.max_turns);
            assert!(!r.successful_termination || r.reached_final);
            if r.successful_termination {
                let first = r
                    .stage_sequence
                    .iter()
                    .position(|s| s.index() == 6)
                    .unwrap();
                let at_final = r.stage_sequence[first..]
                    .iter()
                    .filter(|s| s.index() == 6)
                    .count();
                assert_eq!(at_final, sim.terminal_stage_turns);
            }
        }
        let report = compute_report(&results, 6, &sim).unwrap();
        let t = report.transition_stats;
        assert!((t.rate_forward + t.rate_backward + t.rate_stagnant - 100.0).abs() < 0.1);
        let sum: f64 = report.final_stage_distribution.values().sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }
}

#[test]
fn batch_results_do_not_depend_on_worker_count() {
    let sim = SimulationConfig {
        episodes: 64,
        master_seed: 5,
        ..SimulationConfig::default()
    };
    let policy = SimPolicy::Scripted(BehaviorPolicyKind::default_mixture());
    let env = EnvConfig::default();
    let one = with_threads(1, || run_batch(&policy, &env, &sim))
        .unwrap()
        .unwrap();
    let four = with_threads(4, || run_batch(&policy, &env, &sim))
        .unwrap()
        .unwrap();
    assert_eq!(one, four);
}

#[test]
fn model_file_round_trip() {
    let cfg = small_config();
    let data = build_dataset(&cfg).unwrap();
    let bundle = train(
        &data,
        &LearnerConfig {
            algo: Algo::IqlAwac,
            ..cfg.learner.clone()
        },
    )
    .unwrap()
    .bundle;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&bundle, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.content_hash(), bundle.content_hash());
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config();
    let data = build_dataset(&cfg).unwrap();
    let learner = LearnerConfig {
        algo: Algo::Cql,
        ..cfg.learner.clone()
    };
    let a = train(&data, &learner).unwrap().bundle;
    let b = train(&data, &learner).unwrap().bundle;
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn dataset_file_regenerates_from_provenance() {
    let data = generate_dataset(
        &EnvConfig::default(),
        BehaviorPolicyKind::default_mixture(),
        12,
        25,
        RewardWeights::new(0.6).unwrap(),
        99,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    let loaded = read_dataset(&buf[..]).unwrap();
    assert_eq!(loaded, data);
    assert_eq!(
        regenerate_from_provenance(&loaded.provenance).unwrap(),
        data
    );
}
