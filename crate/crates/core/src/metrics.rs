//! Evaluation quantities: observation reduction, success rate with binomial
//! standard error, the retriever cost model and box-plot tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("original length is zero; reduction is undefined")]
    ZeroOriginal,
    #[error("large-model cost must be positive, got {0}")]
    NonPositiveLargeCost(f64),
    #[error("no results to summarize")]
    EmptyResults,
}

/// `1 - reduced / original`. Not clamped: a longer output gives a negative value.
pub fn reduction(original_len: usize, reduced_len: usize) -> Result<f64, MetricsError> {
    if original_len == 0 {
        return Err(MetricsError::ZeroOriginal);
    }
    Ok(1.0 - reduced_len as f64 / original_len as f64)
}

/// Success rate and its binomial standard error `sqrt(p(1-p)/n)`.
///
/// Panics if `n == 0` or `successes > n`.
pub fn success_rate_se(successes: usize, n: usize) -> (f64, f64) {
    assert!(n > 0, "success_rate_se needs at least one task");
    assert!(successes <= n, "successes ({successes}) exceed tasks ({n})");
    let sr = successes as f64 / n as f64;
    let se = (sr * (1.0 - sr) / n as f64).sqrt();
    (sr, se)
}

/// Prices per one million tokens for the retriever (small) and the agent (large) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_small: f64,
    pub c_large: f64,
}

impl CostModel {
    pub fn new(c_small: f64, c_large: f64) -> Self {
        Self { c_small, c_large }
    }
}

/// Largest kept fraction `|o_r| / |o_i|` at which retrieval still pays off:
/// `(C_L - C_S) / C_L`.
pub fn cost_threshold(model: &CostModel) -> Result<f64, MetricsError> {
    if model.c_large.is_nan() || model.c_large <= 0.0 {
        return Err(MetricsError::NonPositiveLargeCost(model.c_large));
    }
    Ok((model.c_large - model.c_small) / model.c_large)
}

/// `(C_S·|o_i| + C_L·|o_r|, C_L·|o_i|)` in currency units, prices per 1M tokens.
pub fn cost_compare(model: &CostModel, original_tokens: usize, reduced_tokens: usize) -> (f64, f64) {
    const PER: f64 = 1_000_000.0;
    let o_i = original_tokens as f64;
    let o_r = reduced_tokens as f64;
    let retriever = model.c_small * o_i / PER + model.c_large * o_r / PER;
    let plain = model.c_large * o_i / PER;
    (retriever, plain)
}

/// True when the retriever pipeline costs no more than sending the full observation.
pub fn is_cost_effective(model: &CostModel, original_tokens: usize, reduced_tokens: usize) -> bool {
    if original_tokens == 0 {
        return false;
    }
    let (retriever, plain) = cost_compare(model, original_tokens, reduced_tokens);
    retriever <= plain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub name: String,
    pub n_tasks: usize,
    pub successes: usize,
    pub sr: f64,
    pub se: f64,
    pub avg_reduction: f64,
    pub n_steps: usize,
}

/// Outcome of one task: its success flag and the reduction at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub success: bool,
    pub step_reductions: Vec<f64>,
}

/// Aggregates task outcomes. The average reduction is taken over steps, pooled
/// across all tasks.
pub fn summarize(name: &str, results: &[TaskResult]) -> Result<BenchmarkSummary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let n = results.len();
    let successes = results.iter().filter(|r| r.success).count();
    let (sr, se) = success_rate_se(successes, n);
    let steps: Vec<f64> = results.iter().flat_map(|r| r.step_reductions.iter().copied()).collect();
    let avg_reduction = if steps.is_empty() {
        0.0
    } else {
        steps.iter().sum::<f64>() / steps.len() as f64
    };
    Ok(BenchmarkSummary {
        name: name.to_string(),
        n_tasks: n,
        successes,
        sr,
        se,
        avg_reduction,
        n_steps: steps.len(),
    })
}

/// One row of the box-plot table; statistics are `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

/// Default bin edges on original token count; the last bin is open-ended.
pub const DEFAULT_BIN_EDGES: &[f64] = &[0.0, 2_000.0, 4_000.0, 8_000.0, 16_000.0, 32_000.0];

/// Linear-interpolation quantile (inclusive method) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Buckets `(original_tokens, reduction)` rows into `[edge_i, edge_{i+1})`
/// bins and reports the five-number summary of reduction per bin. The last
/// bin extends to infinity; rows below the first edge are ignored.
pub fn bucket_reductions(per_step: &[(usize, f64)], edges: &[f64]) -> Vec<BoxplotRow> {
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); edges.len()];
    for &(tokens, r) in per_step {
        let t = tokens as f64;
        if let Some(i) = (0..edges.len()).rev().find(|&i| t >= edges[i]) {
            bins[i].push(r);
        }
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, mut vals)| {
            let bin_low = edges[i];
            let bin_high = edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if vals.is_empty() {
                return BoxplotRow {
                    bin_low,
                    bin_high,
                    count: 0,
                    min: None,
                    q1: None,
                    median: None,
                    q3: None,
                    max: None,
                };
            }
            vals.sort_by(f64::total_cmp);
            BoxplotRow {
                bin_low,
                bin_high,
                count: vals.len(),
                min: Some(vals[0]),
                q1: Some(quantile_sorted(&vals, 0.25)),
                median: Some(quantile_sorted(&vals, 0.5)),
                q3: Some(quantile_sorted(&vals, 0.75)),
                max: Some(vals[vals.len() - 1]),
            }
        })
        .collect()
}
