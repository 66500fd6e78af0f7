//! The line retriever: a small LLM reads the goal, the action history and the
//! line-numbered accessibility tree, answers with line ranges, and the
//! observation is pruned to those ranges.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

use crate::axtree::{self, normalize_ranges, LineRange, NormalizedRanges};
use crate::baseline::bottom_truncate;
use crate::gateway::{self, ChatRequest, GatewayError, Transport};
use crate::observation::{line_count, Observation, PrunedObservation};
use crate::tokens::TokenCounter;

pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../prompts/system.txt");
pub const DEFAULT_USER_TEMPLATE: &str = include_str!("../prompts/user.txt");

/// Substituted for the history slot when there is nothing to show.
pub const NO_HISTORY: &str = "(no prior actions)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrieverError {
    #[error("prompt has {tokens} tokens, limit is {limit}")]
    PromptTooLarge { tokens: usize, limit: usize },
    #[error("no <answer> block or bracketed range list in model output")]
    NoAnswerBlock,
    #[error("model output selected no in-bounds lines")]
    EmptySelection,
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl RetrieverError {
    /// Conditions handled by the configured fallback instead of surfacing.
    pub fn triggers_fallback(&self) -> bool {
        match self {
            RetrieverError::PromptTooLarge { .. } | RetrieverError::NoAnswerBlock | RetrieverError::EmptySelection => {
                true
            }
            RetrieverError::Gateway(e) => matches!(
                e,
                GatewayError::RateLimited(_)
                    | GatewayError::Transport { .. }
                    | GatewayError::DimensionMismatch { .. }
                    | GatewayError::ZeroVector(_)
            ),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverMode {
    Remove,
    Structure,
}

impl FromStr for RetrieverMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remove" => Ok(Self::Remove),
            "structure" => Ok(Self::Structure),
            other => Err(format!("unknown retriever mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    Passthrough,
    Truncate,
}

impl FromStr for Fallback {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passthrough" => Ok(Self::Passthrough),
            "truncate" => Ok(Self::Truncate),
            other => Err(format!("unknown fallback '{other}'")),
        }
    }
}

/// System message plus a user template with `{goal}`, `{history}` and
/// `{axtree_txt}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM_PROMPT.to_string(),
            user: DEFAULT_USER_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    /// Loads overrides; a `None` path keeps the built-in text for that part.
    pub fn from_files(system: Option<&Path>, user: Option<&Path>) -> Result<Self, RetrieverError> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| RetrieverError::Template(format!("{}: {e}", p.display())));
        let mut t = Self::default();
        if let Some(p) = system {
            t.system = read(p)?;
        }
        if let Some(p) = user {
            t.user = read(p)?;
        }
        Ok(t)
    }

    /// Fills the slots in one pass, so slot-like text inside the values is
    /// left alone.
    pub fn render_user(&self, goal: &str, history: &str, axtree_txt: &str) -> String {
        let mut out = String::with_capacity(self.user.len() + goal.len() + history.len() + axtree_txt.len());
        let mut rest = self.user.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let (value, skip) = if tail.starts_with("{goal}") {
                (goal, "{goal}".len())
            } else if tail.starts_with("{history}") {
                (history, "{history}".len())
            } else if tail.starts_with("{axtree_txt}") {
                (axtree_txt, "{axtree_txt}".len())
            } else {
                ("{", 1)
            };
            out.push_str(value);
            rest = &tail[skip..];
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone)]
pub struct RetrieverConfig {
    pub mode: RetrieverMode,
    pub model_name: String,
    pub include_history: bool,
    pub fallback: Fallback,
    pub max_prompt_tokens: usize,
    /// Budget used when the fallback is bottom truncation.
    pub truncate_budget: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub counter: TokenCounter,
    pub template: PromptTemplate,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            mode: RetrieverMode::Remove,
            model_name: "gpt-4.1-mini".to_string(),
            include_history: true,
            fallback: Fallback::Passthrough,
            max_prompt_tokens: 40_000,
            truncate_budget: 10_000,
            max_output_tokens: 4096,
            temperature: 0.0,
            counter: TokenCounter::heuristic(),
            template: PromptTemplate::default(),
        }
    }
}

pub fn render_history(history: &[String], include_history: bool) -> String {
    if !include_history || history.is_empty() {
        NO_HISTORY.to_string()
    } else {
        history.join("\n")
    }
}

/// Builds the retriever chat request for one observation.
pub fn build_prompt(obs: &Observation, config: &RetrieverConfig) -> Result<ChatRequest, RetrieverError> {
    if obs.goal.is_empty() {
        return Err(RetrieverError::InvalidObservation("goal is empty".into()));
    }
    let history = render_history(&obs.history, config.include_history);
    let user = config
        .template
        .render_user(&obs.goal, &history, &axtree::number_lines(&obs.axtree_text));
    let tokens = config.counter.count(&config.template.system) + config.counter.count(&user);
    if tokens > config.max_prompt_tokens {
        return Err(RetrieverError::PromptTooLarge {
            tokens,
            limit: config.max_prompt_tokens,
        });
    }
    Ok(ChatRequest {
        system_message: config.template.system.clone(),
        user_message: user,
        model_name: config.model_name.clone(),
        max_output_tokens: config.max_output_tokens,
        temperature: config.temperature,
    })
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<answer>(.*?)(?:</answer>|\z)").unwrap())
}

fn bracket_list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[[^\[\]]*(?:\[[^\[\]]*\][^\[\]]*)*\]").unwrap())
}

fn group_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[\(\[]\s*(-?\d+)\s*(?:(?:,|-|–|:|\.\.|to)\s*(-?\d+)\s*)?[\)\]]").unwrap()
    })
}

fn bare_range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+)\s*(?:-|–|\.\.|to)\s*(\d+)").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").unwrap())
}

fn to_line(raw: &str, warnings: &mut Vec<String>) -> Option<usize> {
    match raw.parse::<i64>() {
        Ok(v) if v < 0 => {
            warnings.push(format!("ignored negative line number {v}"));
            None
        }
        Ok(v) => Some(usize::try_from(v).unwrap_or(usize::MAX)),
        Err(_) => {
            warnings.push(format!("ignored unparseable line number '{raw}'"));
            None
        }
    }
}

fn blank_out(s: &str, spans: &[(usize, usize)]) -> String {
    let mut bytes = s.as_bytes().to_vec();
    for &(a, b) in spans {
        bytes[a..b].fill(b' ');
    }
    String::from_utf8(bytes).expect("match spans lie on char boundaries")
}

/// Extracts the raw `(start, end)` pairs from an answer region.
fn extract_pairs(region: &str, warnings: &mut Vec<String>) -> Vec<LineRange> {
    let mut out = Vec::new();
    let push = |a: Option<usize>, b: Option<usize>, out: &mut Vec<LineRange>| {
        if let (Some(a), Some(b)) = (a, b) {
            out.push(LineRange::new(a, b));
        }
    };

    let mut spans = Vec::new();
    for cap in group_re().captures_iter(region) {
        let m = cap.get(0).unwrap();
        spans.push((m.start(), m.end()));
        let a = to_line(&cap[1], warnings);
        let b = match cap.get(2) {
            Some(b) => to_line(b.as_str(), warnings),
            None => a,
        };
        push(a, b, &mut out);
    }
    let rest = blank_out(region, &spans);

    let mut spans = Vec::new();
    for cap in bare_range_re().captures_iter(&rest) {
        let m = cap.get(0).unwrap();
        spans.push((m.start(), m.end()));
        let a = to_line(&cap[1], warnings);
        let b = to_line(&cap[2], warnings);
        push(a, b, &mut out);
    }
    let rest = blank_out(&rest, &spans);

    let loose: Vec<&str> = number_re().find_iter(&rest).map(|m| m.as_str()).collect();
    if !loose.is_empty() {
        warnings.push(format!("paired {} loose numbers sequentially", loose.len()));
        for pair in loose.chunks(2) {
            let a = to_line(pair[0], warnings);
            let b = match pair.get(1) {
                Some(b) => to_line(b, warnings),
                None => a,
            };
            push(a, b, &mut out);
        }
    }
    out
}

/// Parses the retriever's reply into normalized line ranges.
///
/// The last `<answer>` block wins. Without one, the last bracketed list in
/// the text is used. Inside the region, `(a,b)` tuples, `[a,b]` arrays,
/// `(a)` singletons and bare `a-b` ranges are accepted; any remaining numbers
/// are paired up in order.
pub fn parse_llm_response(raw: &str, max_line: usize) -> Result<NormalizedRanges, RetrieverError> {
    let region = match answer_re().captures_iter(raw).last() {
        Some(cap) => cap.get(1).map(|m| m.as_str()).unwrap_or(""),
        None => bracket_list_re()
            .find_iter(raw)
            .filter(|m| m.as_str().bytes().any(|b| b.is_ascii_digit()))
            .last()
            .map(|m| m.as_str())
            .ok_or(RetrieverError::NoAnswerBlock)?,
    };

    let mut warnings = Vec::new();
    let pairs = extract_pairs(region, &mut warnings);
    let mut normalized = normalize_ranges(&pairs, max_line);
    if normalized.ranges.is_empty() {
        return Err(RetrieverError::EmptySelection);
    }
    warnings.append(&mut normalized.warnings);
    normalized.warnings = warnings;
    Ok(normalized)
}

fn fallback(obs: &Observation, config: &RetrieverConfig, reason: &str) -> PrunedObservation {
    let warning = format!("fallback to {:?}: {reason}", config.fallback).to_lowercase();
    log::warn!("step {}: {warning}", obs.step_index);
    match config.fallback {
        Fallback::Passthrough => PrunedObservation::passthrough(&obs.axtree_text, &config.counter, vec![warning]),
        Fallback::Truncate => {
            let mut p = bottom_truncate(&obs.axtree_text, config.truncate_budget, &config.counter);
            p.warnings.push(warning);
            p
        }
    }
}

/// Prompt, call, parse and prune one observation.
///
/// Oversized prompts, unparseable replies, empty selections and transient
/// transport failures go through `config.fallback` and leave a warning.
/// Authentication failures, replay misses and invalid input are returned.
pub fn retrieve(
    obs: &Observation,
    config: &RetrieverConfig,
    transport: &dyn Transport,
) -> Result<PrunedObservation, RetrieverError> {
    if obs.axtree_text.is_empty() {
        return Ok(PrunedObservation::passthrough(
            "",
            &config.counter,
            vec!["empty observation; retrieval skipped".into()],
        ));
    }

    let attempt = || -> Result<NormalizedRanges, RetrieverError> {
        let request = build_prompt(obs, config)?;
        let reply = gateway::chat(&request, transport)?;
        parse_llm_response(&reply, line_count(&obs.axtree_text))
    };
    let ranges = match attempt() {
        Ok(r) => r,
        Err(e) if e.triggers_fallback() => return Ok(fallback(obs, config, &e.to_string())),
        Err(e) => return Err(e),
    };

    let mut pruned = match config.mode {
        RetrieverMode::Remove => axtree::prune_remove(&obs.axtree_text, &ranges.ranges, &config.counter),
        RetrieverMode::Structure => {
            let tree = axtree::parse_axtree(&obs.axtree_text)
                .map_err(|e| RetrieverError::InvalidObservation(e.to_string()))?;
            axtree::prune_structure(&tree, &ranges.ranges, &config.counter)
        }
    };
    pruned.warnings.extend(ranges.warnings);
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedTransport;
    use crate::observation::PruneMode;

    fn r(v: &[(usize, usize)]) -> Vec<LineRange> {
        v.iter().map(|&p| LineRange::from(p)).collect()
    }

    #[test]
    fn prompt_contains_goal_and_numbered_observation() {
        let obs = Observation::new("G", "a\nb");
        let req = build_prompt(&obs, &RetrieverConfig::default()).unwrap();
        assert!(req.user_message.contains("# Goal:\nG"));
        assert!(req.user_message.contains("# Observation:\n1: a\n2: b"));
        assert!(req.user_message.contains(&format!("# History of interaction with the task:\n{NO_HISTORY}")));
        assert_eq!(req.system_message, DEFAULT_SYSTEM_PROMPT);
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn prompt_includes_history_unless_disabled() {
        let obs = Observation::new("G", "a").with_history(vec!["click('a12')".into()]);
        let req = build_prompt(&obs, &RetrieverConfig::default()).unwrap();
        assert!(req.user_message.contains("# History of interaction with the task:\nclick('a12')\n"));
        let cfg = RetrieverConfig {
            include_history: false,
            ..Default::default()
        };
        let req = build_prompt(&obs, &cfg).unwrap();
        assert!(!req.user_message.contains("click('a12')"));
    }

    #[test]
    fn slot_text_in_values_is_not_substituted() {
        let t = PromptTemplate::default();
        let out = t.render_user("{history}", "H", "{goal}");
        assert!(out.contains("# Goal:\n{history}\n"));
        assert!(out.ends_with("# Observation:\n{goal}"));
    }

    #[test]
    fn prompt_too_large() {
        let big: Vec<String> = (0..10_000).map(|i| format!("[a{i}] button 'x'")).collect();
        let obs = Observation::new("G", big.join("\n"));
        let err = build_prompt(&obs, &RetrieverConfig::default()).unwrap_err();
        assert!(matches!(err, RetrieverError::PromptTooLarge { limit: 40_000, .. }));
    }

    #[test]
    fn parses_reference_answer() {
        let raw = "<think>x</think>\n<answer>[(1,3), (20,25), (158,158), (200,250)]</answer>";
        let n = parse_llm_response(raw, 300).unwrap();
        assert_eq!(n.ranges, r(&[(1, 3), (20, 25), (158, 158), (200, 250)]));
        assert!(n.warnings.is_empty());
    }

    #[test]
    fn parses_arrays_and_merges() {
        let n = parse_llm_response("<answer>[[1,3],[3,6]]</answer>", 10).unwrap();
        assert_eq!(n.ranges, r(&[(1, 6)]));
    }

    #[test]
    fn last_answer_wins() {
        let raw = "<answer>[(1,2)]</answer> hmm, actually <answer>[(5,6)]</answer>";
        assert_eq!(parse_llm_response(raw, 10).unwrap().ranges, r(&[(5, 6)]));
    }

    #[test]
    fn bare_list_without_answer_block() {
        let raw = "Relevant lines are [(2,4), (8,8)] I think.";
        assert_eq!(parse_llm_response(raw, 10).unwrap().ranges, r(&[(2, 4), (8, 8)]));
    }

    #[test]
    fn bare_dash_ranges_and_loose_pairs() {
        assert_eq!(parse_llm_response("<answer>2-4, 7 - 9</answer>", 10).unwrap().ranges, r(&[(2, 4), (7, 9)]));
        let n = parse_llm_response("<answer>1, 3</answer>", 10).unwrap();
        assert_eq!(n.ranges, r(&[(1, 3)]));
        assert_eq!(n.warnings.len(), 1);
    }

    #[test]
    fn failure_signals() {
        assert_eq!(parse_llm_response("I cannot help", 10), Err(RetrieverError::NoAnswerBlock));
        assert_eq!(parse_llm_response("<answer>none</answer>", 10), Err(RetrieverError::EmptySelection));
        assert_eq!(parse_llm_response("<answer>[(50,60)]</answer>", 10), Err(RetrieverError::EmptySelection));
        assert_eq!(parse_llm_response("<answer>[(6,2)]</answer>", 10), Err(RetrieverError::EmptySelection));
    }

    #[test]
    fn inverted_and_negative_ranges_warn() {
        let n = parse_llm_response("<answer>[(6,2), (1,2), (-3,4)]</answer>", 10).unwrap();
        assert_eq!(n.ranges, r(&[(1, 2)]));
        assert_eq!(n.warnings.len(), 2);
    }

    #[test]
    fn full_range_is_identity() {
        let text = "RootWebArea 'A'\n\t[b1] button 'x'\n\t[b2] link 'y'";
        let obs = Observation::new("G", text);
        let t = ScriptedTransport::always("<answer>[(1,3)]</answer>");
        for mode in [RetrieverMode::Remove, RetrieverMode::Structure] {
            let cfg = RetrieverConfig { mode, ..Default::default() };
            let p = retrieve(&obs, &cfg, &t).unwrap();
            assert_eq!(p.text, text);
            assert_eq!(p.reduction, 0.0);
        }
    }

    #[test]
    fn garbage_reply_falls_back_to_passthrough() {
        let obs = Observation::new("G", "a\nb");
        let p = retrieve(&obs, &RetrieverConfig::default(), &ScriptedTransport::always("garbage")).unwrap();
        assert_eq!(p.mode, PruneMode::Passthrough);
        assert_eq!(p.text, "a\nb");
        assert_eq!(p.reduction, 0.0);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn truncate_fallback_uses_budget() {
        let obs = Observation::new("G", "a b c\nd e f\ng h i");
        let cfg = RetrieverConfig {
            fallback: Fallback::Truncate,
            truncate_budget: 6,
            ..Default::default()
        };
        let p = retrieve(&obs, &cfg, &ScriptedTransport::always("nope")).unwrap();
        assert_eq!(p.mode, PruneMode::Truncate);
        assert_eq!(p.text, "a b c\nd e f");
    }

    #[test]
    fn auth_errors_propagate() {
        let obs = Observation::new("G", "a");
        let t = ScriptedTransport::new().with_queued([Err(GatewayError::Auth("bad key".into()))]);
        let err = retrieve(&obs, &RetrieverConfig::default(), &t).unwrap_err();
        assert!(matches!(err, RetrieverError::Gateway(GatewayError::Auth(_))));
    }

    #[test]
    fn transient_errors_fall_back() {
        let obs = Observation::new("G", "a");
        let errs = (0..4).map(|_| Err(GatewayError::RateLimited("x".into())));
        let t = ScriptedTransport::new().with_queued(errs);
        let p = retrieve(&obs, &RetrieverConfig::default(), &t).unwrap();
        assert_eq!(p.mode, PruneMode::Passthrough);
    }
}
