//! Context reduction for LLM web agents.
//!
//! A small model reads the goal, the action history and a line-numbered
//! accessibility tree, and answers with the line ranges worth keeping. The
//! observation is then cut down to those lines, either verbatim
//! ([`axtree::prune_remove`]) or together with an id-and-role skeleton of
//! their ancestors ([`axtree::prune_structure`]).
//!
//! Embedding chunk retrieval and bottom truncation are provided as
//! baselines, and [`harness`] replays recorded episodes to measure reduction
//! and cost.

pub mod axtree;
pub mod baseline;
pub mod config;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod observation;
pub mod retriever;
pub mod tokens;

pub use axtree::{
    normalize_ranges, number_lines, parse_axtree, prune_remove, prune_structure, serialize, AxNode, AxTree,
    AxTreeError, LineRange, NormalizedRanges,
};
pub use baseline::{bottom_truncate, chunk_text, cosine_similarity, embed_retrieve, Chunk, EmbedConfig, RankedChunk};
pub use gateway::{chat, embed, ChatRequest, EmbeddingVector, GatewayError, Transport};
pub use metrics::{cost_compare, cost_threshold, reduction, success_rate_se, BenchmarkSummary, CostModel};
pub use observation::{Observation, PruneMode, PrunedObservation};
pub use retriever::{
    build_prompt, parse_llm_response, retrieve, Fallback, RetrieverConfig, RetrieverError, RetrieverMode,
};
pub use tokens::{count_tokens, tokenize_offsets, TokenCounter};
