//! Offline episode replay: run a pruning strategy over recorded episodes and
//! produce per-step rows, a benchmark summary, a box-plot table and a cost table.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

use crate::baseline::{self, BaselineError, EmbedConfig};
use crate::gateway::Transport;
use crate::metrics::{self, BenchmarkSummary, BoxplotRow, CostModel, MetricsError, TaskResult};
use crate::observation::{Observation, PrunedObservation};
use crate::retriever::{self, RetrieverConfig, RetrieverError, RetrieverMode};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}:{line}: schema error: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            HarnessError::FileNotFound(path.to_path_buf())
        } else {
            HarnessError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeStep {
    pub axtree_text: String,
    #[serde(default)]
    pub action_taken: Option<String>,
}

/// One recorded task. JSONL schema:
/// `{"task_id", "benchmark", "goal", "steps": [{"axtree_text", "action_taken"}], "success"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub benchmark: String,
    pub goal: String,
    pub steps: Vec<EpisodeStep>,
    #[serde(default)]
    pub success: Option<bool>,
}

impl EpisodeRecord {
    /// Observation for step `k`: the goal, actions of steps `0..k`, and step `k`'s tree.
    pub fn observation(&self, k: usize) -> Observation {
        let history = self.steps[..k]
            .iter()
            .filter_map(|s| s.action_taken.clone())
            .collect();
        Observation {
            goal: self.goal.clone(),
            history,
            axtree_text: self.steps[k].axtree_text.clone(),
            step_index: k,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.goal.is_empty() {
            return Err("goal is empty".into());
        }
        if self.steps.is_empty() {
            return Err("episode has no steps".into());
        }
        Ok(())
    }
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| HarnessError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EpisodeRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        rec.validate().map_err(schema)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_episodes(path: &Path, episodes: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for ep in episodes {
        writeln!(file, "{}", serde_json::to_string(ep)?).map_err(io_err(path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Line,
    LineStructure,
    Embed,
    Truncate,
    Passthrough,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Line => "line",
            Strategy::LineStructure => "line_structure",
            Strategy::Embed => "embed",
            Strategy::Truncate => "truncate",
            Strategy::Passthrough => "passthrough",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(Strategy::Line),
            "line_structure" | "line-structure" => Ok(Strategy::LineStructure),
            "embed" => Ok(Strategy::Embed),
            "truncate" => Ok(Strategy::Truncate),
            "passthrough" => Ok(Strategy::Passthrough),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub retriever: RetrieverConfig,
    pub embed: EmbedConfig,
    pub truncate_budget: usize,
    pub workers: usize,
    pub bin_edges: Vec<f64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            retriever: RetrieverConfig::default(),
            embed: EmbedConfig::default(),
            truncate_budget: 10_000,
            workers: 1,
            bin_edges: metrics::DEFAULT_BIN_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub task_id: String,
    pub step: usize,
    pub mode: String,
    pub original_tokens: usize,
    pub pruned_tokens: usize,
    pub reduction: f64,
    pub warnings: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub task_id: String,
    pub step: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub token_counter: String,
    pub rows: Vec<StepRow>,
    pub summary: BenchmarkSummary,
    pub boxplot: Vec<BoxplotRow>,
    pub errored: Vec<EpisodeFailure>,
}

#[derive(Debug, Error)]
enum StepError {
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

fn run_step(
    obs: &Observation,
    strategy: Strategy,
    config: &ReplayConfig,
    transport: &dyn Transport,
) -> Result<PrunedObservation, StepError> {
    let counter = &config.retriever.counter;
    Ok(match strategy {
        Strategy::Line | Strategy::LineStructure => {
            let mode = if strategy == Strategy::Line {
                RetrieverMode::Remove
            } else {
                RetrieverMode::Structure
            };
            let cfg = RetrieverConfig {
                mode,
                ..config.retriever.clone()
            };
            retriever::retrieve(obs, &cfg, transport)?
        }
        Strategy::Embed => baseline::embed_retrieve(obs, transport, &config.embed)?,
        Strategy::Truncate => baseline::bottom_truncate(&obs.axtree_text, config.truncate_budget, counter),
        Strategy::Passthrough => PrunedObservation::passthrough(&obs.axtree_text, counter, Vec::new()),
    })
}

struct EpisodeOutcome {
    rows: Vec<StepRow>,
    failure: Option<EpisodeFailure>,
}

fn replay_episode(
    ep: &EpisodeRecord,
    strategy: Strategy,
    config: &ReplayConfig,
    transport: &dyn Transport,
) -> EpisodeOutcome {
    let mut rows = Vec::with_capacity(ep.steps.len());
    for k in 0..ep.steps.len() {
        let obs = ep.observation(k);
        match run_step(&obs, strategy, config, transport) {
            Ok(p) => rows.push(StepRow {
                task_id: ep.task_id.clone(),
                step: k,
                mode: p.mode.to_string(),
                original_tokens: p.original_token_count,
                pruned_tokens: p.pruned_token_count,
                reduction: p.reduction,
                warnings: p.warnings.join(" | "),
            }),
            Err(e) => {
                log::error!("episode {} aborted at step {k}: {e}", ep.task_id);
                return EpisodeOutcome {
                    rows,
                    failure: Some(EpisodeFailure {
                        task_id: ep.task_id.clone(),
                        step: k,
                        error: e.to_string(),
                    }),
                };
            }
        }
    }
    EpisodeOutcome { rows, failure: None }
}

fn benchmark_name(episodes: &[EpisodeRecord]) -> String {
    let mut names: Vec<&str> = episodes.iter().map(|e| e.benchmark.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.join("+")
}

/// Replays every episode with `strategy`. Episodes run on up to
/// `config.workers` threads; steps within an episode run in order. An
/// unrecoverable error stops only its own episode.
///
/// Episodes without a recorded success flag count as failures in the summary.
pub fn replay(
    episodes: &[EpisodeRecord],
    strategy: Strategy,
    config: &ReplayConfig,
    transport: &dyn Transport,
) -> Result<RunReport, HarnessError> {
    let workers = config.workers.clamp(1, episodes.len().max(1));
    let slots: Vec<Mutex<Option<EpisodeOutcome>>> = episodes.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= episodes.len() {
                    break;
                }
                let outcome = replay_episode(&episodes[i], strategy, config, transport);
                *slots[i].lock().expect("slot lock poisoned") = Some(outcome);
            });
        }
    });

    let mut rows = Vec::new();
    let mut errored = Vec::new();
    let mut tasks = Vec::with_capacity(episodes.len());
    for (ep, slot) in episodes.iter().zip(slots) {
        let outcome = slot.into_inner().expect("slot lock poisoned").expect("every episode replayed");
        tasks.push(TaskResult {
            success: ep.success == Some(true),
            step_reductions: outcome.rows.iter().map(|r| r.reduction).collect(),
        });
        rows.extend(outcome.rows);
        errored.extend(outcome.failure);
    }

    let summary = metrics::summarize(&benchmark_name(episodes), &tasks)?;
    let per_step: Vec<(usize, f64)> = rows.iter().map(|r| (r.original_tokens, r.reduction)).collect();
    let boxplot = metrics::bucket_reductions(&per_step, &config.bin_edges);
    Ok(RunReport {
        strategy,
        token_counter: config.retriever.counter.name().to_string(),
        rows,
        summary,
        boxplot,
        errored,
    })
}

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const BOXPLOT_CSV: &str = "boxplot.csv";

const ROW_HEADER: [&str; 7] = [
    "task_id",
    "step",
    "mode",
    "original_tokens",
    "pruned_tokens",
    "reduction",
    "warnings",
];

fn fmt6(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    strategy: Strategy,
    token_counter: &'a str,
    summary: &'a BenchmarkSummary,
    errored: &'a [EpisodeFailure],
}

/// Writes `report.csv`, `summary.json` and `boxplot.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut w = csv::Writer::from_path(dir.join(REPORT_CSV))?;
    w.write_record(ROW_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.task_id.clone(),
            r.step.to_string(),
            r.mode.clone(),
            r.original_tokens.to_string(),
            r.pruned_tokens.to_string(),
            fmt6(r.reduction),
            r.warnings.clone(),
        ])?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv::Writer::from_path(dir.join(BOXPLOT_CSV))?;
    w.write_record(["bin_low", "bin_high", "count", "min", "q1", "median", "q3", "max"])?;
    for b in &report.boxplot {
        w.write_record([
            fmt6(b.bin_low),
            fmt6(b.bin_high),
            b.count.to_string(),
            fmt_opt(b.min),
            fmt_opt(b.q1),
            fmt_opt(b.median),
            fmt_opt(b.q3),
            fmt_opt(b.max),
        ])?;
    }
    w.flush().map_err(io_err(dir))?;

    let summary = SummaryFile {
        strategy: report.strategy,
        token_counter: &report.token_counter,
        summary: &report.summary,
        errored: &report.errored,
    };
    let path = dir.join(SUMMARY_JSON);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(())
}

/// Reads the per-step rows back from a `report.csv`.
pub fn read_report_rows(path: &Path) -> Result<Vec<StepRow>, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::FileNotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub task_id: String,
    pub step: usize,
    /// Kept fraction `|o_r| / |o_i|`; `None` when the original was empty.
    pub alpha: Option<f64>,
    pub retriever_cost: f64,
    pub plain_cost: f64,
    pub cost_effective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: CostModel,
    pub alpha_threshold: f64,
    pub min_reduction: f64,
    pub total_retriever_cost: f64,
    pub total_plain_cost: f64,
    pub fraction_cost_effective: f64,
    pub steps: Vec<StepCost>,
}

/// Per-step and total cost of the retriever pipeline against sending the
/// full observation to the large model.
pub fn cost_report(rows: &[StepRow], model: &CostModel) -> Result<CostReport, MetricsError> {
    let alpha_threshold = metrics::cost_threshold(model)?;
    if rows.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let steps: Vec<StepCost> = rows
        .iter()
        .map(|r| {
            let (retriever_cost, plain_cost) = metrics::cost_compare(model, r.original_tokens, r.pruned_tokens);
            StepCost {
                task_id: r.task_id.clone(),
                step: r.step,
                alpha: (r.original_tokens > 0).then(|| r.pruned_tokens as f64 / r.original_tokens as f64),
                retriever_cost,
                plain_cost,
                cost_effective: metrics::is_cost_effective(model, r.original_tokens, r.pruned_tokens),
            }
        })
        .collect();
    let effective = steps.iter().filter(|s| s.cost_effective).count();
    Ok(CostReport {
        model: *model,
        alpha_threshold,
        min_reduction: 1.0 - alpha_threshold,
        total_retriever_cost: steps.iter().map(|s| s.retriever_cost).sum(),
        total_plain_cost: steps.iter().map(|s| s.plain_cost).sum(),
        fraction_cost_effective: effective as f64 / steps.len() as f64,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayError, ScriptedTransport};

    fn episode(id: &str, steps: &[(&str, Option<&str>)], success: Option<bool>) -> EpisodeRecord {
        EpisodeRecord {
            task_id: id.into(),
            benchmark: "bench".into(),
            goal: format!("goal of {id}"),
            steps: steps
                .iter()
                .map(|(t, a)| EpisodeStep {
                    axtree_text: t.to_string(),
                    action_taken: a.map(str::to_string),
                })
                .collect(),
            success,
        }
    }

    #[test]
    fn history_accumulates_previous_actions() {
        let ep = episode("t", &[("a", Some("click('1')")), ("b", None), ("c", Some("fill('2')")), ("d", None)], None);
        assert!(ep.observation(0).history.is_empty());
        assert_eq!(ep.observation(1).history, vec!["click('1')"]);
        assert_eq!(ep.observation(3).history, vec!["click('1')", "fill('2')"]);
        assert_eq!(ep.observation(3).axtree_text, "d");
    }

    #[test]
    fn load_reports_schema_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let good = serde_json::to_string(&episode("a", &[("x", None)], Some(true))).unwrap();
        fs::write(&path, format!("{good}\n{{\"task_id\":\"b\",\"benchmark\":\"x\",\"steps\":[]}}\n")).unwrap();
        match load_episodes(&path) {
            Err(HarnessError::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("goal"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(matches!(
            load_episodes(&dir.path().join("missing.jsonl")),
            Err(HarnessError::FileNotFound(_))
        ));
    }

    #[test]
    fn load_two_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let eps = vec![episode("a", &[("x", None)], Some(true)), episode("b", &[("y", Some("z"))], None)];
        save_episodes(&path, &eps).unwrap();
        assert_eq!(load_episodes(&path).unwrap(), eps);
    }

    #[test]
    fn passthrough_rows_are_zero() {
        let eps = vec![
            episode("a", &[("[a1] button 'x'", Some("click('a1')")), ("[a2] link 'y'", None)], Some(true)),
            episode("b", &[("RootWebArea 'z'", None)], Some(false)),
        ];
        let report = replay(&eps, Strategy::Passthrough, &ReplayConfig::default(), &ScriptedTransport::new()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.reduction == 0.0));
        assert_eq!(report.summary.sr, 0.5);
    }

    #[test]
    fn fatal_error_aborts_only_its_episode() {
        let eps = vec![
            episode("a", &[("x", None), ("y", None)], Some(true)),
            episode("b", &[("z", None)], Some(true)),
        ];
        let t = ScriptedTransport::always("<answer>[(1,1)]</answer>")
            .with_queued([Err(GatewayError::Auth("denied".into()))]);
        let report = replay(&eps, Strategy::Line, &ReplayConfig::default(), &t).unwrap();
        assert_eq!(report.errored.len(), 1);
        assert_eq!(report.errored[0].task_id, "a");
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].task_id, "b");
    }

    #[test]
    fn concurrent_replay_matches_sequential() {
        let eps: Vec<EpisodeRecord> = (0..8)
            .map(|i| {
                let text = format!("RootWebArea 'p{i}'\n\t[a{i}] button 'go'\n\t[b{i}] link 'away'");
                episode(&format!("t{i}"), &[(text.as_str(), Some("click")), (text.as_str(), None)], Some(i % 2 == 0))
            })
            .collect();
        let t = ScriptedTransport::always("<answer>[(2,2)]</answer>");
        let seq = replay(&eps, Strategy::LineStructure, &ReplayConfig::default(), &t).unwrap();
        let par_cfg = ReplayConfig {
            workers: 4,
            ..Default::default()
        };
        let par = replay(&eps, Strategy::LineStructure, &par_cfg, &t).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn cost_report_examples() {
        let row = |orig: usize, pruned: usize| StepRow {
            task_id: "t".into(),
            step: 0,
            mode: "remove".into(),
            original_tokens: orig,
            pruned_tokens: pruned,
            reduction: 1.0 - pruned as f64 / orig as f64,
            warnings: String::new(),
        };
        let m = CostModel::new(0.4, 2.0);
        let rep = cost_report(&[row(100, 27), row(1000, 270)], &m).unwrap();
        assert_eq!(rep.alpha_threshold, 0.8);
        assert_eq!(rep.fraction_cost_effective, 1.0);
        let rep = cost_report(&[row(100, 100)], &m).unwrap();
        assert_eq!(rep.fraction_cost_effective, 0.0);
        assert!(cost_report(&[], &m).is_err());
    }
}
