use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stage-planner")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("STAGE_PLANNER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(text.lines().count(), 1, "stderr should be one line: {text}");
    text
}

#[test]
fn report_json_matches_golden_file() {
    let out = run(&[
        "report",
        "--episodes",
        fixture("episodes.jsonl").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let golden = std::fs::read(fixture("report.golden.json")).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn report_csv_has_documented_header() {
    let out = run(&[
        "report",
        "--episodes",
        fixture("episodes.jsonl").to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(stage_planner::metrics::CSV_HEADER));
    for l in lines {
        assert_eq!(l.split(',').count(), 8, "{l}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("kind=usage"));

    let out = run(&["train", "--algo", "ppo", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&[
        "report",
        "--episodes",
        fixture("episodes.jsonl").to_str().unwrap(),
        "--format",
        "xml",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = run(&["report", "--episodes", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("missing.jsonl"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[learner]\nexpectle = 0.7\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("d.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(
        line.contains("kind=config") && line.contains("expectle"),
        "{line}"
    );
}

#[test]
fn outputs_carry_config_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    std::fs::write(
        p("run.toml"),
        "[learner]\nepochs = 1\nhidden = 8\n[sim]\nepisodes = 3\n",
    )
    .unwrap();
    assert!(run(&[
        "gen-data",
        "--config",
        &p("run.toml"),
        "--out",
        &p("d.jsonl"),
        "--episodes",
        "5",
        "--seed",
        "42"
    ])
    .status
    .success());
    let header = std::fs::read_to_string(p("d.jsonl")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(
        header.contains("\"config_hash\"") && header.contains("\"seed\":\"42\""),
        "{header}"
    );

    assert!(run(&[
        "train",
        "--algo",
        "bc",
        "--data",
        &p("d.jsonl"),
        "--config",
        &p("run.toml"),
        "--out",
        &p("m.json")
    ])
    .status
    .success());
    let model = std::fs::read_to_string(p("m.json")).unwrap();
    assert!(model.contains("\"config_hash\"") && model.contains("\"seed\""));

    assert!(run(&[
        "simulate",
        "--model",
        &p("m.json"),
        "--config",
        &p("run.toml"),
        "--seed",
        "9",
        "--out",
        &p("e.jsonl")
    ])
    .status
    .success());
    let log = std::fs::read_to_string(p("e.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("\"master_seed\":9"));
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn sweep_reward_emits_one_report_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[learner]\nepochs = 1\nhidden = 8\n[sim]\nepisodes = 4\n[data]\nepisodes = 10\nmax_turns = 20\naugment_per_transition = 20\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep-reward",
        "--config",
        cfg.to_str().unwrap(),
        "--alphas",
        "0.0,0.5,1.0",
        "--seeds",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for alpha in ["0", "0.5", "1"] {
        let text = std::fs::read_to_string(out_dir.join(format!("alpha-{alpha}.json"))).unwrap();
        let rows: Vec<stage_planner::metrics::ReportRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].provenance["alpha"], alpha);
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    let rows: Vec<stage_planner::metrics::ReportRow> = serde_json::from_str(&summary).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn sweep_cql_alpha_records_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[learner]\nepochs = 1\nhidden = 8\n[sim]\nepisodes = 3\n[data]\nepisodes = 10\nmax_turns = 20\naugment_per_transition = 0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep-cql-alpha",
        "--config",
        cfg.to_str().unwrap(),
        "--values",
        "0.1,3",
        "--seeds",
        "1",
        "--format",
        "markdown",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(out_dir.join("summary.md")).unwrap();
    assert!(summary.contains("cql_alpha=0.1") && summary.contains("cql_alpha=3"));
}
