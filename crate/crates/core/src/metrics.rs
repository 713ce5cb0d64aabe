//! Episode-level evaluation metrics and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Stage;
use crate::reward::distance_reward;
use crate::simulator::{EpisodeResult, SimulationConfig};

/// Mean and population standard deviation over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    /// `m±s` with three decimals.
    pub fn display(&self) -> String {
        format!("{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentDistribution {
    pub pos: MeanStd,
    pub neu: MeanStd,
    pub neg: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub avg_transitions: MeanStd,
    pub avg_forward: MeanStd,
    pub avg_backward: MeanStd,
    pub avg_stagnant: MeanStd,
    /// Pooled over all decided transitions, in percent.
    pub rate_forward: f64,
    pub rate_backward: f64,
    pub rate_stagnant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub n_stages: usize,
    pub stage_final_reach_count: usize,
    pub successful_termination_count: usize,
    pub sentiment_distribution: SentimentDistribution,
    pub avg_distance_reward: MeanStd,
    /// Turn counts include the fixed opener.
    pub avg_turns_all: MeanStd,
    /// `None` when no episode terminated successfully.
    pub avg_turns_success: Option<MeanStd>,
    /// Percentage of episodes ending at each stage, keyed by stage index.
    pub final_stage_distribution: BTreeMap<usize, f64>,
    /// Decided turns spent at each stage; the final stage is capped.
    pub avg_turns_per_stage: BTreeMap<usize, MeanStd>,
    pub transition_stats: TransitionStats,
}

#[derive(Debug, Default, Clone, Copy)]
struct Moves {
    forward: usize,
    backward: usize,
    stagnant: usize,
}

fn count_moves(sequence: &[Stage]) -> Moves {
    let mut m = Moves::default();
    let mut prev = Stage::FIRST.index();
    for s in sequence {
        let cur = s.index();
        match cur.cmp(&prev) {
            std::cmp::Ordering::Greater => m.forward += 1,
            std::cmp::Ordering::Less => m.backward += 1,
            std::cmp::Ordering::Equal => m.stagnant += 1,
        }
        prev = cur;
    }
    m
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn compute_report(
    results: &[EpisodeResult],
    n_stages: usize,
    sim: &SimulationConfig,
) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::EmptyInput("episode results"));
    }
    if n_stages < 2 {
        return Err(Error::Config("n_stages must be >= 2".into()));
    }
    let final_stage = Stage::new(n_stages, n_stages)?;
    let cap = sim.terminal_stage_turns;
    let episodes = results.len();

    let mut pos = Vec::with_capacity(episodes);
    let mut neu = Vec::with_capacity(episodes);
    let mut neg = Vec::with_capacity(episodes);
    let mut dist = Vec::with_capacity(episodes);
    let mut turns_all = Vec::with_capacity(episodes);
    let mut turns_success = Vec::new();
    let mut final_counts: BTreeMap<usize, usize> = (1..=n_stages).map(|s| (s, 0)).collect();
    let mut per_stage: BTreeMap<usize, Vec<f64>> = (1..=n_stages)
        .map(|s| (s, Vec::with_capacity(episodes)))
        .collect();
    let (mut fwd, mut bwd, mut stag, mut total) = (vec![], vec![], vec![], vec![]);
    let mut reach = 0;
    let mut success = 0;

    for r in results {
        let turns = r.stage_sequence.len();
        if r.sentiments.len() != turns {
            return Err(Error::Schema(
                "sentiments length differs from stage_sequence".into(),
            ));
        }
        let (mut p, mut u, mut g, mut d) = (0.0, 0.0, 0.0, 0.0);
        let mut stage_counts = vec![0usize; n_stages + 1];
        for (s, logits) in r.stage_sequence.iter().zip(&r.sentiments) {
            s.check(n_stages)?;
            let (pp, pu, pg) = logits.class_probabilities();
            p += pp;
            u += pu;
            g += pg;
            d += distance_reward(*s, n_stages)?;
            stage_counts[s.index()] += 1;
        }
        pos.push(mean_or_zero(p, turns));
        neu.push(mean_or_zero(u, turns));
        neg.push(mean_or_zero(g, turns));
        dist.push(mean_or_zero(d, turns));

        let reached = r.stage_sequence.contains(&final_stage);
        reach += reached as usize;
        success += r.successful_termination as usize;
        turns_all.push((turns + 1) as f64);
        if r.successful_termination {
            turns_success.push((turns + 1) as f64);
        }
        *final_counts.entry(r.final_stage().index()).or_default() += 1;

        stage_counts[n_stages] = stage_counts[n_stages].min(cap);
        for (stage, v) in per_stage.iter_mut() {
            v.push(stage_counts[*stage] as f64);
        }

        let m = count_moves(&r.stage_sequence);
        fwd.push(m.forward as f64);
        bwd.push(m.backward as f64);
        stag.push(m.stagnant as f64);
        total.push(turns as f64);
    }

    let pooled: f64 = total.iter().sum();
    let rate = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / pooled.max(1.0);
    Ok(MetricsReport {
        episodes,
        n_stages,
        stage_final_reach_count: reach,
        successful_termination_count: success,
        sentiment_distribution: SentimentDistribution {
            pos: MeanStd::of(&pos),
            neu: MeanStd::of(&neu),
            neg: MeanStd::of(&neg),
        },
        avg_distance_reward: MeanStd::of(&dist),
        avg_turns_all: MeanStd::of(&turns_all),
        avg_turns_success: (!turns_success.is_empty()).then(|| MeanStd::of(&turns_success)),
        final_stage_distribution: final_counts
            .into_iter()
            .map(|(s, c)| (s, 100.0 * c as f64 / episodes as f64))
            .collect(),
        avg_turns_per_stage: per_stage
            .into_iter()
            .map(|(s, v)| (s, MeanStd::of(&v)))
            .collect(),
        transition_stats: TransitionStats {
            avg_transitions: MeanStd::of(&total),
            avg_forward: MeanStd::of(&fwd),
            avg_backward: MeanStd::of(&bwd),
            avg_stagnant: MeanStd::of(&stag),
            rate_forward: rate(&fwd),
            rate_backward: rate(&bwd),
            rate_stagnant: rate(&stag),
        },
    })
}

impl MetricsReport {
    /// Percentage of episodes that reached the final stage.
    pub fn reach_rate(&self) -> f64 {
        100.0 * self.stage_final_reach_count as f64 / self.episodes as f64
    }

    /// Report from its JSON encoding.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Usage(format!(
                "unknown report format `{other}` (expected json, csv or markdown)"
            ))),
        }
    }
}

/// One labelled report in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    /// Free-form provenance such as the config hash, seed or swept value.
    pub provenance: BTreeMap<String, String>,
    pub report: MetricsReport,
}

/// Header of the long-format CSV output.
pub const CSV_HEADER: &str = "label,config_hash,master_seed,table,row,column,mean,std";

const MAIN_COLUMNS: [&str; 9] = [
    "reach_count",
    "success_count",
    "sentiment_pos",
    "sentiment_neu",
    "sentiment_neg",
    "distance_reward",
    "avg_turns_all",
    "avg_turns_success",
    "episodes",
];

/// (column, mean, std) cells of the main table, in column order. `None`
/// marks an undefined value.
fn main_cells(r: &MetricsReport) -> Vec<(&'static str, Option<MeanStd>)> {
    let exact = |v: usize| {
        Some(MeanStd {
            mean: v as f64,
            std: 0.0,
        })
    };
    let s = &r.sentiment_distribution;
    let values = [
        exact(r.stage_final_reach_count),
        exact(r.successful_termination_count),
        Some(s.pos),
        Some(s.neu),
        Some(s.neg),
        Some(r.avg_distance_reward),
        Some(r.avg_turns_all),
        r.avg_turns_success,
        exact(r.episodes),
    ];
    MAIN_COLUMNS.into_iter().zip(values).collect()
}

fn transition_cells(t: &TransitionStats) -> Vec<(&'static str, MeanStd)> {
    let rate = |v: f64| MeanStd { mean: v, std: 0.0 };
    vec![
        ("avg_transitions", t.avg_transitions),
        ("forward", t.avg_forward),
        ("backward", t.avg_backward),
        ("stagnant", t.avg_stagnant),
        ("rate_forward", rate(t.rate_forward)),
        ("rate_backward", rate(t.rate_backward)),
        ("rate_stagnant", rate(t.rate_stagnant)),
    ]
}

fn fmt_num(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_cell(v: Option<MeanStd>, exact: bool) -> String {
    match v {
        None => "N/A".into(),
        Some(m) if exact => format!("{}", m.mean as i64),
        Some(m) => m.display(),
    }
}

fn markdown(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let n = rows.first().map_or(0, |r| r.report.n_stages);
    for row in rows.iter().filter(|r| !r.provenance.is_empty()) {
        let kv: Vec<String> = row
            .provenance
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = writeln!(out, "<!-- {}: {} -->", row.label, kv.join(" "));
    }
    if rows.iter().any(|r| !r.provenance.is_empty()) {
        out.push('\n');
    }

    out.push_str("## Main metrics\n\n| model |");
    for c in MAIN_COLUMNS {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(MAIN_COLUMNS.len()));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.label);
        for (c, v) in main_cells(&row.report) {
            let exact = matches!(c, "reach_count" | "success_count" | "episodes");
            let _ = write!(out, " {} |", fmt_cell(v, exact));
        }
        out.push('\n');
    }

    out.push_str("\n## Transition metrics\n\n| model |");
    let tcols: Vec<&str> = transition_cells(&rows[0].report.transition_stats)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    for c in &tcols {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(tcols.len()));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.label);
        for (c, v) in transition_cells(&row.report.transition_stats) {
            let cell = if c.starts_with("rate_") {
                format!("{:.1}%", v.mean)
            } else {
                v.display()
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }

    out.push_str("\n## Final-stage distribution (%)\n\n| model |");
    for s in 1..=n {
        let _ = write!(out, " stage {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(n));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.label);
        for s in 1..=n {
            let v = row
                .report
                .final_stage_distribution
                .get(&s)
                .copied()
                .unwrap_or(0.0);
            let _ = write!(out, " {v:.1} |");
        }
        out.push('\n');
    }

    out.push_str("\n## Turns per stage\n\n| model |");
    for s in 1..=n {
        let _ = write!(out, " stage {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(n));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.label);
        for s in 1..=n {
            let v = row
                .report
                .avg_turns_per_stage
                .get(&s)
                .copied()
                .unwrap_or_default();
            let _ = write!(out, " {} |", v.display());
        }
        out.push('\n');
    }
    out
}

fn csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let prov = |k: &str| {
            r.provenance
                .get(k)
                .map_or("", |v| v.as_str())
                .replace(',', ";")
        };
        let label = format!(
            "{},{},{}",
            r.label.replace(',', ";"),
            prov("config_hash"),
            prov("master_seed")
        );
        let mut line = |label: &str, table: &str, row: &str, col: &str, v: Option<MeanStd>| {
            let (m, s) = match v {
                Some(v) => (fmt_num(v.mean), fmt_num(v.std)),
                None => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(out, "{label},{table},{row},{col},{m},{s}");
        };
        for (c, v) in main_cells(&r.report) {
            line(&label, "main", "all", c, v);
        }
        for (c, v) in transition_cells(&r.report.transition_stats) {
            line(&label, "transitions", "all", c, Some(v));
        }
        for (s, pct) in &r.report.final_stage_distribution {
            let v = MeanStd {
                mean: *pct,
                std: 0.0,
            };
            line(&label, "final_stage", &s.to_string(), "percent", Some(v));
        }
        for (s, v) in &r.report.avg_turns_per_stage {
            line(&label, "stage_turns", &s.to_string(), "turns", Some(*v));
        }
    }
    out
}

/// Render a single report.
pub fn emit_tables(report: &MetricsReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)
            .map_err(|e| Error::Numeric(e.to_string()))?
            + "\n"),
        _ => emit_comparison(
            &[ReportRow {
                label: "model".into(),
                provenance: BTreeMap::new(),
                report: report.clone(),
            }],
            format,
        ),
    }
}

/// Render several labelled reports, one row per report.
pub fn emit_comparison(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("report rows"));
    }
    Ok(match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(rows).map_err(|e| Error::Numeric(e.to_string()))? + "\n"
        }
        ReportFormat::Csv => csv(rows),
        ReportFormat::Markdown => markdown(rows),
    })
}
