use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use axprune_core::baseline::{bottom_truncate, embed_retrieve};
use axprune_core::config::{Settings, TransportChoice};
use axprune_core::harness::{self, Strategy};
use axprune_core::metrics::{self, CostModel};
use axprune_core::observation::{Observation, PruneMode, PrunedObservation};
use axprune_core::retriever::{retrieve, RetrieverConfig, RetrieverMode};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "axprune", version, about = "Prune accessibility-tree observations for web agents")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; missing keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured transport
    #[arg(long, global = true, value_parser = ["live", "replay", "scripted"])]
    transport: Option<String>,
    /// Replay fixture (JSONL) or scripted-mock script (JSON)
    #[arg(long, global = true)]
    fixture: Option<PathBuf>,
    /// Worker threads for replay
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Prune one observation; text to stdout, metrics JSON to stderr
    Prune {
        /// remove | structure | embed | truncate | passthrough
        #[arg(long)]
        mode: PruneMode,
        /// Task goal shown to the retriever
        #[arg(long)]
        goal: String,
        /// Accessibility tree text, one node per line, tabs for depth
        #[arg(long)]
        axtree: PathBuf,
        /// One previous action per line
        #[arg(long)]
        history: Option<PathBuf>,
        /// Token budget for truncate mode
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Replay recorded episodes and write report.csv, summary.json, boxplot.csv
    Replay {
        /// JSONL, one episode per line
        #[arg(long)]
        episodes: PathBuf,
        /// line | line_structure | embed | truncate | passthrough
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cost threshold, and the per-step cost table of a replay report
    Cost {
        /// Retriever model price per million tokens
        #[arg(long)]
        c_small: f64,
        /// Agent model price per million tokens
        #[arg(long)]
        c_large: f64,
        /// Directory holding a report.csv from `replay`
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn settings(global: &GlobalArgs) -> Result<Settings> {
    let mut s = match &global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(t) = &global.transport {
        s.transport = t.parse::<TransportChoice>().map_err(anyhow::Error::msg)?;
    }
    if let Some(f) = &global.fixture {
        s.fixture = Some(f.clone());
    }
    if let Some(w) = global.workers {
        s.workers = w;
    }
    Ok(s)
}

fn read_history(path: Option<&Path>) -> Result<Vec<String>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn prune(
    s: &Settings,
    mode: PruneMode,
    goal: String,
    axtree: &Path,
    history: Option<&Path>,
    budget: Option<usize>,
) -> Result<PrunedObservation> {
    let text = fs::read_to_string(axtree).with_context(|| format!("reading {}", axtree.display()))?;
    let obs = Observation::new(goal, text).with_history(read_history(history)?);
    let counter = s.counter()?;
    Ok(match mode {
        PruneMode::Passthrough => PrunedObservation::passthrough(&obs.axtree_text, &counter, Vec::new()),
        PruneMode::Truncate => bottom_truncate(&obs.axtree_text, budget.unwrap_or(s.truncate_budget), &counter),
        PruneMode::Remove | PruneMode::Structure => {
            let config = RetrieverConfig {
                mode: if mode == PruneMode::Remove {
                    RetrieverMode::Remove
                } else {
                    RetrieverMode::Structure
                },
                ..s.retriever_config()?
            };
            let transport = s.build_transport()?;
            retrieve(&obs, &config, transport.as_ref())?
        }
        PruneMode::Embed => {
            let transport = s.build_transport()?;
            embed_retrieve(&obs, transport.as_ref(), &s.embed_config()?)?
        }
    })
}

fn cost(c_small: f64, c_large: f64, report: Option<&Path>) -> Result<serde_json::Value> {
    let model = CostModel::new(c_small, c_large);
    let threshold = metrics::cost_threshold(&model)?;
    match report {
        Some(dir) => {
            let rows = harness::read_report_rows(&dir.join(harness::REPORT_CSV))?;
            if rows.is_empty() {
                bail!("{} has no rows", dir.display());
            }
            Ok(serde_json::to_value(harness::cost_report(&rows, &model)?)?)
        }
        None => {
            // per 1M input tokens, over a grid of kept fractions
            let table: Vec<_> = (0..=10)
                .map(|i| {
                    let kept = i * 100_000;
                    let (retriever, plain) = metrics::cost_compare(&model, 1_000_000, kept);
                    json!({
                        "alpha": i as f64 / 10.0,
                        "retriever_cost": retriever,
                        "plain_cost": plain,
                        "cost_effective": retriever <= plain,
                    })
                })
                .collect();
            Ok(json!({
                "model": model,
                "alpha_threshold": threshold,
                "min_reduction": 1.0 - threshold,
                "table": table,
            }))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    match cli.command {
        Command::Prune {
            mode,
            goal,
            axtree,
            history,
            budget,
        } => {
            let p = prune(&s, mode, goal, &axtree, history.as_deref(), budget)?;
            println!("{}", p.text);
            let metrics = json!({
                "mode": p.mode,
                "original_lines": p.original_line_count,
                "kept_lines": p.kept_line_numbers.len(),
                "original_tokens": p.original_token_count,
                "pruned_tokens": p.pruned_token_count,
                "reduction": p.reduction,
                "token_counter": s.token_counter,
                "warnings": p.warnings,
            });
            eprintln!("{metrics}");
        }
        Command::Replay { episodes, strategy, out } => {
            let records = harness::load_episodes(&episodes)?;
            let config = s.replay_config()?;
            let transport = match strategy {
                Strategy::Truncate | Strategy::Passthrough => None,
                _ => Some(s.build_transport()?),
            };
            let noop = axprune_core::gateway::ScriptedTransport::new();
            let t: &dyn axprune_core::Transport = match &transport {
                Some(t) => t.as_ref(),
                None => &noop,
            };
            let report = harness::replay(&records, strategy, &config, t)?;
            harness::write_report(&report, &out)?;
            for f in &report.errored {
                log::warn!("episode {} stopped at step {}: {}", f.task_id, f.step, f.error);
            }
            eprintln!(
                "{} steps from {} episodes ({} errored); avg reduction {:.4}",
                report.rows.len(),
                records.len(),
                report.errored.len(),
                report.summary.avg_reduction
            );
        }
        Command::Cost {
            c_small,
            c_large,
            report,
        } => {
            let v = cost(c_small, c_large, report.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
