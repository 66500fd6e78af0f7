//! Accessibility-tree text: parsing, serialization, line numbering and the
//! two line-range pruning strategies.
//!
//! Grammar, one node per line:
//!
//! ```text
//! <tabs>[<bid>] <role> '<name>' <prop>, <prop>, ...
//! ```
//!
//! The number of leading tabs is the depth. The `[bid] ` prefix, the quoted
//! name and the property list are optional. A line that does not re-render
//! byte-exactly from its parsed parts is kept as a malformed `text` leaf whose
//! name holds the raw content, so parsing never loses bytes.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::observation::{PruneMode, PrunedObservation};
use crate::tokens::TokenCounter;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AxTreeError {
    #[error("observation text is empty")]
    EmptyInput,
}

/// Inclusive, 1-based line interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for LineRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

impl From<(usize, usize)> for LineRange {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

/// Output of [`normalize_ranges`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedRanges {
    pub ranges: Vec<LineRange>,
    pub warnings: Vec<String>,
}

/// Sorts, clamps to `[1, max_line]` and merges overlapping or adjacent
/// ranges. Inverted ranges are dropped with a warning; ranges lying wholly
/// outside the document are dropped silently.
pub fn normalize_ranges(ranges: &[LineRange], max_line: usize) -> NormalizedRanges {
    let mut warnings = Vec::new();
    let mut clamped: Vec<LineRange> = Vec::with_capacity(ranges.len());
    for r in ranges {
        if r.start > r.end {
            warnings.push(format!("dropped inverted range {r}"));
            continue;
        }
        let (start, end) = (r.start.max(1), r.end.min(max_line));
        if start > end {
            continue;
        }
        clamped.push(LineRange::new(start, end));
    }
    clamped.sort();

    let mut merged: Vec<LineRange> = Vec::with_capacity(clamped.len());
    for r in clamped {
        match merged.last_mut() {
            Some(prev) if r.start <= prev.end + 1 => prev.end = prev.end.max(r.end),
            _ => merged.push(r),
        }
    }
    NormalizedRanges {
        ranges: merged,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxNode {
    pub bid: Option<String>,
    pub role: String,
    pub name: Option<String>,
    pub properties: Vec<String>,
    pub depth: usize,
    pub line_no: usize,
    /// Set for lines outside the grammar; `name` then holds the raw content
    /// after the indentation and the node is always a leaf.
    #[serde(default)]
    pub malformed: bool,
    pub children: Vec<AxNode>,
}

impl AxNode {
    pub fn new(role: impl Into<String>, depth: usize) -> Self {
        Self {
            bid: None,
            role: role.into(),
            name: None,
            properties: Vec::new(),
            depth,
            line_no: 0,
            malformed: false,
            children: Vec::new(),
        }
    }

    pub fn with_bid(mut self, bid: impl Into<String>) -> Self {
        self.bid = Some(bid.into());
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_properties<I, S>(mut self, props: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.properties = props.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_children(mut self, children: Vec<AxNode>) -> Self {
        self.children = children;
        self
    }

    /// The node's source line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_header(
            &mut out,
            self.depth,
            self.bid.as_deref(),
            &self.role,
            self.malformed,
            self.name.as_deref(),
        );
        if !self.malformed && !self.properties.is_empty() {
            out.push(' ');
            out.push_str(&self.properties.join(", "));
        }
        out
    }
}

fn render_header(
    out: &mut String,
    depth: usize,
    bid: Option<&str>,
    role: &str,
    malformed: bool,
    name: Option<&str>,
) {
    out.extend(std::iter::repeat_n('\t', depth));
    if malformed {
        out.push_str(name.unwrap_or_default());
        return;
    }
    if let Some(bid) = bid {
        out.push('[');
        out.push_str(bid);
        out.push_str("] ");
    }
    out.push_str(role);
    if let Some(name) = name {
        out.push_str(" '");
        out.push_str(name);
        out.push('\'');
    }
}

/// Per-line bookkeeping kept alongside the recursive node forest.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LineInfo {
    parent: Option<usize>,
    skeleton: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxTree {
    pub roots: Vec<AxNode>,
    pub source_lines: Vec<String>,
    pub line_count: usize,
    lines: Vec<LineInfo>,
}

impl AxTree {
    /// Builds a tree from hand-constructed roots, renumbering `line_no` in
    /// pre-order and rendering `source_lines` from the nodes.
    pub fn from_roots(mut roots: Vec<AxNode>) -> Self {
        let mut source_lines = Vec::new();
        let mut lines = Vec::new();
        let mut stack: Vec<(&mut AxNode, Option<usize>)> =
            roots.iter_mut().rev().map(|n| (n, None)).collect();
        while let Some((node, parent)) = stack.pop() {
            let idx = source_lines.len();
            node.line_no = idx + 1;
            source_lines.push(node.render());
            lines.push(LineInfo {
                parent,
                skeleton: skeleton_of(node.depth, node.bid.as_deref(), &node.role, node.malformed, node.name.as_deref()),
            });
            for child in node.children.iter_mut().rev() {
                stack.push((child, Some(idx)));
            }
        }
        let line_count = source_lines.len();
        Self {
            roots,
            source_lines,
            line_count,
            lines,
        }
    }

    /// 0-based index of the parent line of 0-based line `idx`.
    pub fn parent_of(&self, idx: usize) -> Option<usize> {
        self.lines.get(idx).and_then(|l| l.parent)
    }

    /// The original text (source lines joined with `\n`).
    pub fn source_text(&self) -> String {
        self.source_lines.join("\n")
    }

    /// Pre-order iterator over all nodes.
    pub fn iter(&self) -> impl Iterator<Item = &AxNode> {
        let mut stack: Vec<&AxNode> = self.roots.iter().rev().collect();
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }
}

fn skeleton_of(depth: usize, bid: Option<&str>, role: &str, malformed: bool, name: Option<&str>) -> String {
    let mut out = String::new();
    if malformed {
        // never an ancestor, but keep something sensible
        render_header(&mut out, depth, None, "", true, name);
    } else {
        render_header(&mut out, depth, bid, role, false, None);
    }
    out
}

struct ParsedLine {
    depth: usize,
    bid: Option<String>,
    role: String,
    name: Option<String>,
    properties: Vec<String>,
    malformed: bool,
}

fn parse_line(raw: &str) -> ParsedLine {
    let depth = raw.bytes().take_while(|&b| b == b'\t').count();
    let content = &raw[depth..];
    if let Some(p) = parse_content(content, depth) {
        let node = AxNode {
            bid: p.bid.clone(),
            role: p.role.clone(),
            name: p.name.clone(),
            properties: p.properties.clone(),
            depth,
            line_no: 0,
            malformed: false,
            children: Vec::new(),
        };
        if node.render() == raw {
            return p;
        }
    }
    ParsedLine {
        depth,
        bid: None,
        role: "text".to_string(),
        name: Some(content.to_string()),
        properties: Vec::new(),
        malformed: true,
    }
}

fn parse_content(content: &str, depth: usize) -> Option<ParsedLine> {
    let mut rest = content;
    let mut bid = None;
    if let Some(after) = rest.strip_prefix('[') {
        let close = after.find("] ")?;
        let id = &after[..close];
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return None;
        }
        bid = Some(id.to_string());
        rest = &after[close + 2..];
    }

    let role_end = rest.find(' ').unwrap_or(rest.len());
    let role = &rest[..role_end];
    if role.is_empty() || role.starts_with('\'') || role.starts_with('[') {
        return None;
    }
    rest = &rest[role_end..];

    let mut name = None;
    let mut properties = Vec::new();
    if let Some(after_space) = rest.strip_prefix(' ') {
        if let Some(quoted) = after_space.strip_prefix('\'') {
            // closing quote: first one followed by end of line or a space
            let bytes = quoted.as_bytes();
            let close = (0..bytes.len()).find(|&i| {
                bytes[i] == b'\'' && (i + 1 == bytes.len() || bytes[i + 1] == b' ')
            })?;
            name = Some(quoted[..close].to_string());
            let tail = &quoted[close + 1..];
            if let Some(props) = tail.strip_prefix(' ') {
                properties = props.split(", ").map(str::to_string).collect();
            } else if !tail.is_empty() {
                return None;
            }
        } else {
            properties = after_space.split(", ").map(str::to_string).collect();
        }
    } else if !rest.is_empty() {
        return None;
    }

    Some(ParsedLine {
        depth,
        bid,
        role: role.to_string(),
        name,
        properties,
        malformed: false,
    })
}

/// Parses accessibility-tree text into a forest, one node per line.
///
/// Indentation jumps (a line more than one tab deeper than its predecessor)
/// attach to the deepest open ancestor. Malformed lines attach the same way
/// and close deeper open nodes, but never become parents themselves, so a
/// pre-order walk always visits lines in source order.
pub fn parse_axtree(text: &str) -> Result<AxTree, AxTreeError> {
    if text.is_empty() {
        return Err(AxTreeError::EmptyInput);
    }
    let source_lines: Vec<String> = text.split('\n').map(str::to_string).collect();
    let mut nodes: Vec<Option<AxNode>> = Vec::with_capacity(source_lines.len());
    let mut lines: Vec<LineInfo> = Vec::with_capacity(source_lines.len());
    let mut open: Vec<usize> = Vec::new();

    for (idx, raw) in source_lines.iter().enumerate() {
        let p = parse_line(raw);
        let depth_of = |j: usize| nodes[j].as_ref().map(|n: &AxNode| n.depth).unwrap_or(0);
        while open.last().is_some_and(|&j| depth_of(j) >= p.depth) {
            open.pop();
        }
        let parent = open.last().copied();
        if !p.malformed {
            open.push(idx);
        }
        lines.push(LineInfo {
            parent,
            skeleton: skeleton_of(p.depth, p.bid.as_deref(), &p.role, p.malformed, p.name.as_deref()),
        });
        nodes.push(Some(AxNode {
            bid: p.bid,
            role: p.role,
            name: p.name,
            properties: p.properties,
            depth: p.depth,
            line_no: idx + 1,
            malformed: p.malformed,
            children: Vec::new(),
        }));
    }

    // Children always follow their parent, so folding from the back hands
    // each node to its parent only after all of its own children arrived.
    let mut roots = Vec::new();
    for idx in (0..nodes.len()).rev() {
        let mut node = nodes[idx].take().expect("each node moved once");
        node.children.reverse();
        match lines[idx].parent {
            Some(p) => nodes[p].as_mut().expect("parent precedes child").children.push(node),
            None => roots.push(node),
        }
    }
    roots.reverse();

    let line_count = source_lines.len();
    Ok(AxTree {
        roots,
        source_lines,
        line_count,
        lines,
    })
}

/// Renders the forest back to text, lines joined by `\n` with no trailing newline.
pub fn serialize(tree: &AxTree) -> String {
    let mut out = String::new();
    for (i, node) in tree.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&node.render());
    }
    out
}

/// Prefixes line `k` with `"k: "`, starting at 1.
pub fn number_lines(text: &str) -> String {
    if text.is_empty() {
        return String::new();
    }
    let mut out = String::with_capacity(text.len() + text.len() / 8);
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&(i + 1).to_string());
        out.push_str(": ");
        out.push_str(line);
    }
    out
}

fn in_ranges(ranges: &[LineRange], line: usize) -> bool {
    ranges.iter().any(|r| r.contains(line))
}

/// Keeps exactly the lines inside `ranges`, verbatim and in source order.
pub fn prune_remove(text: &str, ranges: &[LineRange], counter: &TokenCounter) -> PrunedObservation {
    let mut kept = Vec::new();
    let mut out: Vec<&str> = Vec::new();
    if !text.is_empty() {
        for (i, line) in text.split('\n').enumerate() {
            if in_ranges(ranges, i + 1) {
                kept.push(i + 1);
                out.push(line);
            }
        }
    }
    PrunedObservation::measure(text, out.join("\n"), kept, PruneMode::Remove, counter, Vec::new())
}

/// Keeps the lines inside `ranges` verbatim plus a `[bid] role` skeleton
/// line for every ancestor of a kept line that was not itself selected.
pub fn prune_structure(tree: &AxTree, ranges: &[LineRange], counter: &TokenCounter) -> PrunedObservation {
    #[derive(Clone, Copy, PartialEq)]
    enum Keep {
        No,
        Skeleton,
        Verbatim,
    }

    let n = tree.line_count;
    let mut keep = vec![Keep::No; n];
    for (idx, k) in keep.iter_mut().enumerate() {
        if in_ranges(ranges, idx + 1) {
            *k = Keep::Verbatim;
        }
    }
    for idx in 0..n {
        if keep[idx] != Keep::Verbatim {
            continue;
        }
        let mut cur = tree.parent_of(idx);
        while let Some(p) = cur {
            if keep[p] != Keep::No {
                break;
            }
            keep[p] = Keep::Skeleton;
            cur = tree.parent_of(p);
        }
    }

    let mut out: Vec<&str> = Vec::new();
    let mut kept = Vec::new();
    for (idx, k) in keep.iter().enumerate() {
        match k {
            Keep::No => continue,
            Keep::Verbatim => out.push(&tree.source_lines[idx]),
            Keep::Skeleton => out.push(&tree.lines[idx].skeleton),
        }
        kept.push(idx + 1);
    }
    PrunedObservation::measure(
        &tree.source_text(),
        out.join("\n"),
        kept,
        PruneMode::Structure,
        counter,
        Vec::new(),
    )
}
