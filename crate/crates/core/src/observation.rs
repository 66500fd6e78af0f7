//! Observation inputs and pruned outputs shared by every retrieval strategy.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::tokens::TokenCounter;

/// Everything the retriever sees at one agent step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub goal: String,
    #[serde(default)]
    pub history: Vec<String>,
    pub axtree_text: String,
    #[serde(default)]
    pub step_index: usize,
}

impl Observation {
    pub fn new(goal: impl Into<String>, axtree_text: impl Into<String>) -> Self {
        Self {
            goal: goal.into(),
            history: Vec::new(),
            axtree_text: axtree_text.into(),
            step_index: 0,
        }
    }

    pub fn with_history(mut self, history: Vec<String>) -> Self {
        self.history = history;
        self
    }

    pub fn at_step(mut self, step_index: usize) -> Self {
        self.step_index = step_index;
        self
    }
}

/// How a [`PrunedObservation`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    Remove,
    Structure,
    Truncate,
    Embed,
    Passthrough,
}

impl PruneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMode::Remove => "remove",
            PruneMode::Structure => "structure",
            PruneMode::Truncate => "truncate",
            PruneMode::Embed => "embed",
            PruneMode::Passthrough => "passthrough",
        }
    }
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remove" => Ok(PruneMode::Remove),
            "structure" => Ok(PruneMode::Structure),
            "truncate" => Ok(PruneMode::Truncate),
            "embed" => Ok(PruneMode::Embed),
            "passthrough" => Ok(PruneMode::Passthrough),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// A reduced observation together with the measurements used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedObservation {
    pub text: String,
    /// 1-based source lines represented in `text`, ascending.
    pub kept_line_numbers: Vec<usize>,
    pub original_line_count: usize,
    pub original_token_count: usize,
    pub pruned_token_count: usize,
    /// `1 - pruned / original` in tokens; 0 when the original is empty.
    pub reduction: f64,
    pub mode: PruneMode,
    pub warnings: Vec<String>,
}

impl PrunedObservation {
    /// Measures `text` against `original` and fills in counts and reduction.
    pub fn measure(
        original: &str,
        text: String,
        kept_line_numbers: Vec<usize>,
        mode: PruneMode,
        counter: &TokenCounter,
        mut warnings: Vec<String>,
    ) -> Self {
        let original_token_count = counter.count(original);
        let pruned_token_count = counter.count(&text);
        let reduction = match crate::metrics::reduction(original_token_count, pruned_token_count) {
            Ok(r) => r,
            Err(_) => {
                warnings.push("original observation has no tokens; reduction recorded as 0".into());
                0.0
            }
        };
        Self {
            text,
            kept_line_numbers,
            original_line_count: line_count(original),
            original_token_count,
            pruned_token_count,
            reduction,
            mode,
            warnings,
        }
    }

    /// The observation forwarded unchanged.
    pub fn passthrough(original: &str, counter: &TokenCounter, warnings: Vec<String>) -> Self {
        let n = line_count(original);
        let mut p = Self::measure(
            original,
            original.to_string(),
            (1..=n).collect(),
            PruneMode::Passthrough,
            counter,
            warnings,
        );
        // identical text, so exactly zero regardless of counter
        p.reduction = 0.0;
        p
    }
}

/// Number of `\n`-separated lines; the empty string has none.
pub fn line_count(text: &str) -> usize {
    if text.is_empty() {
        0
    } else {
        text.split('\n').count()
    }
}
