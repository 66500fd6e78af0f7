//! Browser bindings: prune a pasted tree with a pasted model answer, bottom
//! truncation, and the cost curve. Every export returns a JSON string; errors
//! come back as `{"error": "..."}`.

use axprune_core::baseline::bottom_truncate;
use axprune_core::metrics::{cost_compare, cost_threshold, CostModel};
use axprune_core::{number_lines, parse_axtree, parse_llm_response, prune_remove, prune_structure, PrunedObservation, TokenCounter};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Serialize)]
pub struct PruneView {
    pub text: String,
    pub kept: Vec<usize>,
    pub original_tokens: usize,
    pub pruned_tokens: usize,
    pub reduction: f64,
    pub warnings: Vec<String>,
}

impl From<PrunedObservation> for PruneView {
    fn from(p: PrunedObservation) -> Self {
        Self {
            text: p.text,
            kept: p.kept_line_numbers,
            original_tokens: p.original_token_count,
            pruned_tokens: p.pruned_token_count,
            reduction: p.reduction,
            warnings: p.warnings,
        }
    }
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

pub fn prune_view(axtree: &str, answer: &str, mode: &str) -> Result<PruneView, String> {
    let counter = TokenCounter::heuristic();
    let tree = parse_axtree(axtree).map_err(|e| e.to_string())?;
    let ranges = parse_llm_response(answer, tree.line_count).map_err(|e| e.to_string())?;
    let mut p = match mode {
        "remove" => prune_remove(axtree, &ranges.ranges, &counter),
        "structure" => prune_structure(&tree, &ranges.ranges, &counter),
        other => return Err(format!("unknown mode '{other}'")),
    };
    p.warnings.extend(ranges.warnings);
    Ok(p.into())
}

/// Prunes `axtree` to the line ranges found in `answer` (a model reply or a
/// bare list such as `[(1,3), (8,9)]`). `mode` is `remove` or `structure`.
#[wasm_bindgen]
pub fn prune(axtree: &str, answer: &str, mode: &str) -> String {
    to_json(prune_view(axtree, answer, mode))
}

/// The tree with `N: ` line prefixes, as the retriever sees it.
#[wasm_bindgen]
pub fn numbered(axtree: &str) -> String {
    number_lines(axtree)
}

#[wasm_bindgen]
pub fn truncate(axtree: &str, budget: usize) -> String {
    to_json(Ok(PruneView::from(bottom_truncate(axtree, budget, &TokenCounter::heuristic()))))
}

#[derive(Serialize)]
pub struct CostCurve {
    pub threshold: f64,
    /// `(alpha, retriever cost, plain cost)` per million input tokens.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn cost_curve_view(c_small: f64, c_large: f64, samples: usize) -> Result<CostCurve, String> {
    let model = CostModel::new(c_small, c_large);
    let threshold = cost_threshold(&model).map_err(|e| e.to_string())?;
    let samples = samples.max(2);
    let points = (0..samples)
        .map(|i| {
            let kept = 1_000_000 * i / (samples - 1);
            let (retriever, plain) = cost_compare(&model, 1_000_000, kept);
            (kept as f64 / 1e6, retriever, plain)
        })
        .collect();
    Ok(CostCurve { threshold, points })
}

#[wasm_bindgen]
pub fn cost_curve(c_small: f64, c_large: f64, samples: usize) -> String {
    to_json(cost_curve_view(c_small, c_large, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TREE: &str = "RootWebArea 'Shop'\n\t[a1] navigation 'Main'\n\t\t[a2] link 'Home'\n\t[b1] main\n\t\t[b2] button 'Buy'";

    #[test]
    fn prune_both_modes() {
        let v = prune_view(TREE, "<answer>[(5,5)]</answer>", "structure").unwrap();
        assert_eq!(v.text, "RootWebArea\n\t[b1] main\n\t\t[b2] button 'Buy'");
        assert_eq!(v.kept, vec![1, 4, 5]);
        let v = prune_view(TREE, "[(5,5)]", "remove").unwrap();
        assert_eq!(v.text, "\t\t[b2] button 'Buy'");
        assert!(v.reduction > 0.5);
    }

    #[test]
    fn errors_become_json() {
        let out: serde_json::Value = serde_json::from_str(&prune(TREE, "no idea", "remove")).unwrap();
        assert!(out["error"].as_str().unwrap().contains("answer"));
        let out: serde_json::Value = serde_json::from_str(&prune(TREE, "[(1,1)]", "shuffle")).unwrap();
        assert!(out["error"].is_string());
        let out: serde_json::Value = serde_json::from_str(&prune("", "[(1,1)]", "remove")).unwrap();
        assert!(out["error"].is_string());
    }

    #[test]
    fn truncate_and_numbering() {
        let out: serde_json::Value = serde_json::from_str(&truncate(TREE, 4)).unwrap();
        assert_eq!(out["text"], "RootWebArea 'Shop'");
        assert!(numbered(TREE).starts_with("1: RootWebArea"));
    }

    #[test]
    fn cost_curve_crosses_at_threshold() {
        let c = cost_curve_view(0.4, 2.0, 11).unwrap();
        assert_eq!(c.threshold, 0.8);
        assert_eq!(c.points.len(), 11);
        let (alpha, retriever, plain) = c.points[8];
        assert!((alpha - 0.8).abs() < 1e-12);
        assert!((retriever - plain).abs() < 1e-12);
        assert!(cost_curve_view(1.0, 0.0, 5).is_err());
    }
}
