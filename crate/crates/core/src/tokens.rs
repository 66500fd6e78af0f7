//! Token counting shared by reduction metrics, budgets and chunking.
//!
//! Every length in a run (prompt budgets, truncation budgets, chunk
//! boundaries, reduction ratios) goes through one [`TokenCounter`], so the
//! numbers stay internally consistent even though they will not match any
//! vendor tokenizer exactly.
//!
//! The default counter is a word-and-symbol segmenter: each maximal run of
//! alphanumeric characters is one token and every other non-whitespace
//! character is a token on its own. Whitespace never belongs to a token,
//! which makes the count additive over newline-joined lines.

use std::fmt;
use std::sync::Arc;

/// Byte offsets `[start, end)` of one token in the source string.
pub type Span = (usize, usize);

/// A tokenizer that can be plugged in place of the heuristic default.
pub trait Segmenter: Send + Sync {
    /// Ordered, non-overlapping byte spans of the tokens of `text`.
    fn segment(&self, text: &str) -> Vec<Span>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterKind {
    Heuristic,
    ExactPlugin,
}

/// Named token counter. Cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct TokenCounter {
    name: String,
    kind: CounterKind,
    plugin: Option<Arc<dyn Segmenter>>,
}

impl fmt::Debug for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenCounter")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Default for TokenCounter {
    fn default() -> Self {
        Self::heuristic()
    }
}

impl TokenCounter {
    pub const HEURISTIC_NAME: &'static str = "heuristic";

    pub fn heuristic() -> Self {
        Self {
            name: Self::HEURISTIC_NAME.to_string(),
            kind: CounterKind::Heuristic,
            plugin: None,
        }
    }

    /// Wraps an external segmenter (e.g. a real BPE tokenizer) under `name`.
    pub fn plugin(name: impl Into<String>, segmenter: Arc<dyn Segmenter>) -> Self {
        Self {
            name: name.into(),
            kind: CounterKind::ExactPlugin,
            plugin: Some(segmenter),
        }
    }

    /// Resolves the `token_counter` configuration value. Only the built-in
    /// heuristic can be named from configuration; plugins are registered in code.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            Self::HEURISTIC_NAME | "default" => Some(Self::heuristic()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> CounterKind {
        self.kind
    }

    pub fn count(&self, text: &str) -> usize {
        match &self.plugin {
            Some(p) => p.segment(text).len(),
            None => heuristic_count(text),
        }
    }

    pub fn offsets(&self, text: &str) -> Vec<Span> {
        match &self.plugin {
            Some(p) => p.segment(text),
            None => heuristic_offsets(text),
        }
    }
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

pub fn tokenize_offsets(text: &str, counter: &TokenCounter) -> Vec<Span> {
    counter.offsets(text)
}

fn heuristic_offsets(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(s) = run_start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = run_start {
        spans.push((s, text.len()));
    }
    spans
}

fn heuristic_count(text: &str) -> usize {
    let mut n = 0;
    let mut in_run = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_run {
                n += 1;
                in_run = true;
            }
        } else {
            in_run = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}
