//! Run configuration, read from a TOML key-value file.
//!
//! ```toml
//! model_name = "gpt-4.1-mini"
//! retriever_mode = "structure"    # remove | structure
//! include_history = true
//! fallback = "passthrough"        # passthrough | truncate
//! token_counter = "heuristic"
//! max_prompt_tokens = 40000
//! truncate_budget = 10000
//! chunk_size = 100
//! chunk_overlap = 10
//! top_k = 10
//! endpoint = "https://api.openai.com/v1"
//! transport = "live"              # live | replay | scripted
//! fixture = "fixtures/run.jsonl"  # replay fixture or scripted-mock script
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;
use thiserror::Error;

use crate::baseline::EmbedConfig;
use crate::gateway::{GatewayError, ReplayTransport, RetryPolicy, ScriptedTransport, Transport};
use crate::harness::ReplayConfig;
use crate::metrics::DEFAULT_BIN_EDGES;
use crate::retriever::{Fallback, PromptTemplate, RetrieverConfig, RetrieverError, RetrieverMode};
use crate::tokens::TokenCounter;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {key}: {message}")]
    Value { key: &'static str, message: String },
    #[error(transparent)]
    Template(#[from] RetrieverError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportChoice {
    Live,
    Replay,
    Scripted,
}

impl FromStr for TransportChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!("unknown transport '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub model_name: String,
    pub retriever_mode: RetrieverMode,
    pub include_history: bool,
    pub fallback: Fallback,
    pub token_counter: String,
    pub max_prompt_tokens: usize,
    pub truncate_budget: usize,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub top_k: usize,
    pub endpoint: String,
    pub embedding_model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub workers: usize,
    pub transport: TransportChoice,
    pub fixture: Option<PathBuf>,
    pub system_prompt_file: Option<PathBuf>,
    pub user_prompt_file: Option<PathBuf>,
    pub boxplot_bins: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model_name: "gpt-4.1-mini".into(),
            retriever_mode: RetrieverMode::Remove,
            include_history: true,
            fallback: Fallback::Passthrough,
            token_counter: TokenCounter::HEURISTIC_NAME.into(),
            max_prompt_tokens: 40_000,
            truncate_budget: 10_000,
            chunk_size: 100,
            chunk_overlap: 10,
            top_k: 10,
            endpoint: "https://api.openai.com/v1".into(),
            embedding_model: "text-embedding-3-small".into(),
            max_output_tokens: 4096,
            temperature: 0.0,
            max_retries: 3,
            retry_base_delay_ms: 1000,
            workers: 1,
            transport: TransportChoice::Live,
            fixture: None,
            system_prompt_file: None,
            user_prompt_file: None,
            boxplot_bins: DEFAULT_BIN_EDGES.to_vec(),
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn counter(&self) -> Result<TokenCounter, ConfigError> {
        TokenCounter::from_name(&self.token_counter).ok_or_else(|| ConfigError::Value {
            key: "token_counter",
            message: format!("unknown counter '{}'", self.token_counter),
        })
    }

    pub fn retriever_config(&self) -> Result<RetrieverConfig, ConfigError> {
        if self.max_prompt_tokens == 0 {
            return Err(ConfigError::Value {
                key: "max_prompt_tokens",
                message: "must be positive".into(),
            });
        }
        Ok(RetrieverConfig {
            mode: self.retriever_mode,
            model_name: self.model_name.clone(),
            include_history: self.include_history,
            fallback: self.fallback,
            max_prompt_tokens: self.max_prompt_tokens,
            truncate_budget: self.truncate_budget,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
            counter: self.counter()?,
            template: PromptTemplate::from_files(self.system_prompt_file.as_deref(), self.user_prompt_file.as_deref())?,
        })
    }

    pub fn embed_config(&self) -> Result<EmbedConfig, ConfigError> {
        if self.chunk_overlap >= self.chunk_size {
            return Err(ConfigError::Value {
                key: "chunk_overlap",
                message: "must be smaller than chunk_size".into(),
            });
        }
        if self.top_k == 0 {
            return Err(ConfigError::Value {
                key: "top_k",
                message: "must be at least 1".into(),
            });
        }
        Ok(EmbedConfig {
            chunk_size: self.chunk_size,
            chunk_overlap: self.chunk_overlap,
            top_k: self.top_k,
            counter: self.counter()?,
        })
    }

    pub fn replay_config(&self) -> Result<ReplayConfig, ConfigError> {
        if self.boxplot_bins.is_empty() || self.boxplot_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Value {
                key: "boxplot_bins",
                message: "must be a non-empty increasing list".into(),
            });
        }
        Ok(ReplayConfig {
            retriever: self.retriever_config()?,
            embed: self.embed_config()?,
            truncate_budget: self.truncate_budget,
            workers: self.workers.max(1),
            bin_edges: self.boxplot_bins.clone(),
        })
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.retry_base_delay_ms),
        }
    }

    /// Builds the configured transport.
    pub fn build_transport(&self) -> Result<Box<dyn Transport>, ConfigError> {
        let fixture = || {
            self.fixture.as_deref().ok_or(ConfigError::Value {
                key: "fixture",
                message: "required for replay and scripted transports".into(),
            })
        };
        match self.transport {
            TransportChoice::Replay => Ok(Box::new(ReplayTransport::load(fixture()?)?)),
            TransportChoice::Scripted => Ok(Box::new(ScriptedTransport::load(fixture()?)?.with_retry(RetryPolicy::immediate(self.max_retries)))),
            TransportChoice::Live => self.live_transport(),
        }
    }

    #[cfg(feature = "http")]
    fn live_transport(&self) -> Result<Box<dyn Transport>, ConfigError> {
        Ok(Box::new(
            crate::gateway::HttpTransport::new(&self.endpoint, &self.embedding_model)
                .with_env_credential()
                .with_retry(self.retry_policy()),
        ))
    }

    #[cfg(not(feature = "http"))]
    fn live_transport(&self) -> Result<Box<dyn Transport>, ConfigError> {
        Err(ConfigError::Value {
            key: "transport",
            message: "built without the `http` feature".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let s = Settings::parse("").unwrap();
        assert_eq!(s.max_prompt_tokens, 40_000);
        assert_eq!(s.truncate_budget, 10_000);
        assert_eq!((s.chunk_size, s.chunk_overlap, s.top_k), (100, 10, 10));
        assert!(s.include_history);
        assert_eq!(s.fallback, Fallback::Passthrough);
        assert_eq!(s.temperature, 0.0);
    }

    #[test]
    fn parses_keys() {
        let s = Settings::parse(
            "retriever_mode = \"structure\"\nfallback = \"truncate\"\ntop_k = 3\ntransport = \"scripted\"\nfixture = \"x.json\"\n",
        )
        .unwrap();
        assert_eq!(s.retriever_mode, RetrieverMode::Structure);
        assert_eq!(s.fallback, Fallback::Truncate);
        assert_eq!(s.top_k, 3);
        assert_eq!(s.transport, TransportChoice::Scripted);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Settings::parse("colour = 1").is_err());
        let s = Settings::parse("chunk_overlap = 100").unwrap();
        assert!(s.embed_config().is_err());
        let s = Settings::parse("token_counter = \"bpe\"").unwrap();
        assert!(s.retriever_config().is_err());
        let s = Settings::parse("transport = \"replay\"").unwrap();
        assert!(s.build_transport().is_err());
    }
}
