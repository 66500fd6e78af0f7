//! Comparison strategies: embedding chunk retrieval and bottom truncation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{self, EmbeddingVector, GatewayError, Transport};
use crate::observation::{Observation, PruneMode, PrunedObservation};
use crate::tokens::TokenCounter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid chunking: chunk_size {chunk_size} must exceed overlap {overlap}")]
    InvalidChunking { chunk_size: usize, overlap: usize },
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    /// Token indices `[start, end)`.
    pub token_span: (usize, usize),
    /// Byte offsets `[start, end)` into the source.
    pub char_span: (usize, usize),
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk: Chunk,
    pub score: f64,
}

/// Splits `text` into windows of `chunk_size` tokens advancing by
/// `chunk_size - overlap`; the last window ends at the final token.
pub fn chunk_text(
    text: &str,
    chunk_size: usize,
    overlap: usize,
    counter: &TokenCounter,
) -> Result<Vec<Chunk>, BaselineError> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(BaselineError::InvalidChunking { chunk_size, overlap });
    }
    let spans = counter.offsets(text);
    let n = spans.len();
    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk_size).min(n);
        let char_span = (spans[start].0, spans[end - 1].1);
        chunks.push(Chunk {
            text: text[char_span.0..char_span.1].to_string(),
            token_span: (start, end),
            char_span,
            index: chunks.len(),
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Dot product of two unit vectors.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, BaselineError> {
    if u.dimension() != v.dimension() {
        return Err(BaselineError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Indices of the `top_k` highest scores (ties to the lower index), returned
/// in ascending index order.
pub fn select_top_k(scores: &[f64], top_k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone)]
pub struct EmbedConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub top_k: usize,
    pub counter: TokenCounter,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            chunk_size: 100,
            chunk_overlap: 10,
            top_k: 10,
            counter: TokenCounter::heuristic(),
        }
    }
}

/// Retrieval query: the goal, followed by the action history one per line.
pub fn embed_query(obs: &Observation) -> String {
    if obs.history.is_empty() {
        obs.goal.clone()
    } else {
        format!("{}\n{}", obs.goal, obs.history.join("\n"))
    }
}

/// Ranks chunks of the observation against the goal+history query and keeps
/// the best `top_k`, reassembled in document order.
pub fn embed_retrieve(
    obs: &Observation,
    transport: &dyn Transport,
    config: &EmbedConfig,
) -> Result<PrunedObservation, BaselineError> {
    if config.top_k == 0 {
        return Err(BaselineError::InvalidTopK);
    }
    let chunks = chunk_text(&obs.axtree_text, config.chunk_size, config.chunk_overlap, &config.counter)?;
    if chunks.is_empty() {
        return Ok(PrunedObservation::measure(
            &obs.axtree_text,
            String::new(),
            Vec::new(),
            PruneMode::Embed,
            &config.counter,
            Vec::new(),
        ));
    }

    let mut texts = Vec::with_capacity(chunks.len() + 1);
    texts.push(embed_query(obs));
    texts.extend(chunks.iter().map(|c| c.text.clone()));
    let vectors = gateway::embed(&texts, transport)?;
    let (query, chunk_vecs) = vectors.split_first().expect("query vector present");
    let scores = chunk_vecs
        .iter()
        .map(|v| cosine_similarity(query, v))
        .collect::<Result<Vec<f64>, _>>()?;

    let selected = select_top_k(&scores, config.top_k);
    let text = selected
        .iter()
        .map(|&i| chunks[i].text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let kept = lines_touched(&obs.axtree_text, selected.iter().map(|&i| chunks[i].char_span));
    Ok(PrunedObservation::measure(
        &obs.axtree_text,
        text,
        kept,
        PruneMode::Embed,
        &config.counter,
        Vec::new(),
    ))
}

/// Rank of every chunk, best first; exposed for inspection and tests.
pub fn rank_chunks(chunks: &[Chunk], scores: &[f64]) -> Vec<RankedChunk> {
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .map(|i| RankedChunk {
            chunk: chunks[i].clone(),
            score: scores[i],
        })
        .collect()
}

fn lines_touched(text: &str, spans: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut starts = vec![0usize];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
    let line_of = |offset: usize| starts.partition_point(|&s| s <= offset);
    let mut kept: Vec<usize> = Vec::new();
    for (a, b) in spans {
        if b <= a {
            continue;
        }
        kept.extend(line_of(a)..=line_of(b - 1));
    }
    kept.sort_unstable();
    kept.dedup();
    kept
}

/// Longest prefix of whole lines whose token total fits in `token_budget`.
pub fn bottom_truncate(text: &str, token_budget: usize, counter: &TokenCounter) -> PrunedObservation {
    let mut used = 0;
    let mut end = 0;
    let mut kept = Vec::new();
    if !text.is_empty() {
        for (i, line) in text.split('\n').enumerate() {
            let cost = counter.count(line);
            if used + cost > token_budget {
                break;
            }
            used += cost;
            end = if i == 0 { line.len() } else { end + 1 + line.len() };
            kept.push(i + 1);
        }
    }
    PrunedObservation::measure(
        text,
        text[..end].to_string(),
        kept,
        PruneMode::Truncate,
        counter,
        Vec::new(),
    )
}
