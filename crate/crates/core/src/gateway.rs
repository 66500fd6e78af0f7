//! Provider-neutral chat-completion and embedding transport.
//!
//! Three transports implement [`Transport`]:
//!
//! * [`HttpTransport`] (feature `http`) speaks the common chat-completions and
//!   embeddings JSON schema against a configurable endpoint.
//! * [`ReplayTransport`] answers from a JSONL fixture keyed by request hash.
//! * [`ScriptedTransport`] answers from in-memory rules, for tests and demos.
//!
//! [`RecordingTransport`] wraps any transport and captures a fixture that
//! [`ReplayTransport`] can load later.
//!
//! Callers go through [`chat`] and [`embed`], which add retries and vector
//! normalization on top of the raw transport methods.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

use crate::tokens::TokenCounter;

/// Environment variable holding the live API credential.
pub const API_KEY_ENV: &str = "AXPRUNE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("no recorded response for request {hash}")]
    ReplayMiss { hash: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {0} has zero norm")]
    ZeroVector(usize),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited(_) | GatewayError::Transport { retryable: true, .. }
        )
    }

    fn transport(message: impl Into<String>, retryable: bool) -> Self {
        GatewayError::Transport {
            message: message.into(),
            retryable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_message: String,
    pub user_message: String,
    pub model_name: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_message.is_empty() || self.user_message.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::InvalidRequest("model_name must be non-empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// Stable content hash used to key replay fixtures.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::json!({
            "kind": "chat",
            "model": self.model_name,
            "system": self.system_message,
            "user": self.user_message,
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        });
        sha256_hex(&canonical.to_string())
    }
}

/// Content hash of an embedding batch.
pub fn embed_hash(texts: &[String]) -> String {
    let canonical = serde_json::json!({ "kind": "embed", "texts": texts });
    sha256_hex(&canonical.to_string())
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy, or `None` for a zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(Self::new(self.values.iter().map(|v| v / n).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    LiveHttp,
    ReplayFixture,
    ScriptedMock,
}

/// Exponential backoff: retry `i` (0-based) waits `base_delay * 2^i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut retry = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    let delay = self.delay_for(retry);
                    log::warn!("retrying after {delay:?}: {e}");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

pub trait Transport: Send + Sync {
    fn kind(&self) -> TransportKind;

    /// One chat completion, no retries.
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;

    /// Raw (unnormalized) embeddings, one per input, no retries.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::immediate(0)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn kind(&self) -> TransportKind {
        (**self).kind()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        (**self).embed_raw(texts)
    }
    fn retry_policy(&self) -> RetryPolicy {
        (**self).retry_policy()
    }
}

/// Sends a chat request, retrying transient failures per the transport's policy.
pub fn chat(request: &ChatRequest, transport: &dyn Transport) -> Result<String, GatewayError> {
    request.validate()?;
    transport.retry_policy().run(|| transport.complete(request))
}

/// Embeds `texts` in order and L2-normalizes every vector.
pub fn embed(texts: &[String], transport: &dyn Transport) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = transport.retry_policy().run(|| transport.embed_raw(texts))?;
    if raw.len() != texts.len() {
        return Err(GatewayError::transport(
            format!("expected {} embeddings, got {}", texts.len(), raw.len()),
            false,
        ));
    }
    let dim = raw[0].len();
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            EmbeddingVector::new(v).normalized().ok_or(GatewayError::ZeroVector(i))
        })
        .collect()
}

/// One JSONL fixture line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_hash: String,
    pub kind: FixtureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_vectors: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    Chat,
    Embed,
}

pub fn read_fixture(path: &Path) -> Result<Vec<FixtureRecord>, GatewayError> {
    let file = fs::File::open(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Fixture(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Fixture(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_fixture(path: &Path, records: &[FixtureRecord]) -> Result<(), GatewayError> {
    let mut file = fs::File::create(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| GatewayError::Fixture(e.to_string()))?;
    }
    Ok(())
}

/// Answers strictly from recorded responses. Read-only after load.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    records: HashMap<(FixtureKind, String), FixtureRecord>,
}

impl ReplayTransport {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.kind, r.request_hash.clone()), r))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_records(read_fixture(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn kind(&self) -> TransportKind {
        TransportKind::ReplayFixture
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let hash = request.content_hash();
        self.records
            .get(&(FixtureKind::Chat, hash.clone()))
            .and_then(|r| r.response_text.clone())
            .ok_or(GatewayError::ReplayMiss { hash })
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let hash = embed_hash(texts);
        self.records
            .get(&(FixtureKind::Embed, hash.clone()))
            .and_then(|r| r.response_vectors.clone())
            .ok_or(GatewayError::ReplayMiss { hash })
    }
}

/// Passes calls through to `inner` and keeps every successful exchange as a
/// fixture record.
pub struct RecordingTransport<T> {
    inner: T,
    records: Mutex<Vec<FixtureRecord>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records.lock().expect("recording lock poisoned").clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        write_fixture(path, &self.records())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn kind(&self) -> TransportKind {
        self.inner.kind()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let text = self.inner.complete(request)?;
        self.records.lock().expect("recording lock poisoned").push(FixtureRecord {
            request_hash: request.content_hash(),
            kind: FixtureKind::Chat,
            response_text: Some(text.clone()),
            response_vectors: None,
        });
        Ok(text)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let vectors = self.inner.embed_raw(texts)?;
        self.records.lock().expect("recording lock poisoned").push(FixtureRecord {
            request_hash: embed_hash(texts),
            kind: FixtureKind::Embed,
            response_text: None,
            response_vectors: Some(vectors.clone()),
        });
        Ok(vectors)
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.inner.retry_policy()
    }
}

/// Reply chosen when the user message contains `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRule {
    pub contains: String,
    pub response: String,
}

/// File form of a [`ScriptedTransport`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub chat_rules: Vec<ChatRule>,
    #[serde(default)]
    pub default_response: Option<String>,
    /// Exact text-to-vector table consulted before the hashed embedder.
    #[serde(default)]
    pub vectors: HashMap<String, Vec<f64>>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn default_embedding_dim() -> usize {
    256
}

type EmbedFn = Arc<dyn Fn(&str) -> Vec<f64> + Send + Sync>;

/// Deterministic in-memory transport.
///
/// Chat replies come from, in order: queued responses, the first rule whose
/// `contains` string occurs in the user message, the default response.
/// Embeddings come from the exact-vector table, a custom embedder, or a
/// feature-hashed bag of words.
#[derive(Clone)]
pub struct ScriptedTransport {
    rules: Vec<ChatRule>,
    default_response: Option<String>,
    queue: Arc<Mutex<VecDeque<Result<String, GatewayError>>>>,
    vectors: HashMap<String, Vec<f64>>,
    embedder: Option<EmbedFn>,
    embedding_dim: usize,
    retry: RetryPolicy,
}

impl fmt::Debug for ScriptedTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedTransport")
            .field("rules", &self.rules.len())
            .field("default_response", &self.default_response)
            .field("embedding_dim", &self.embedding_dim)
            .finish()
    }
}

impl Default for ScriptedTransport {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default_response: None,
            queue: Arc::new(Mutex::new(VecDeque::new())),
            vectors: HashMap::new(),
            embedder: None,
            embedding_dim: default_embedding_dim(),
            retry: RetryPolicy::immediate(3),
        }
    }
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Always answers `text`.
    pub fn always(text: impl Into<String>) -> Self {
        Self::new().with_default(text)
    }

    pub fn from_script(script: Script) -> Self {
        Self {
            rules: script.chat_rules,
            default_response: script.default_response,
            vectors: script.vectors,
            embedding_dim: script.embedding_dim.max(1),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        let script: Script =
            serde_json::from_str(&text).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default_response = Some(text.into());
        self
    }

    pub fn with_rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ChatRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    /// Queues one-shot results consumed before rules apply.
    pub fn with_queued(self, results: impl IntoIterator<Item = Result<String, GatewayError>>) -> Self {
        self.queue.lock().expect("queue lock poisoned").extend(results);
        self
    }

    pub fn with_vector(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        self.vectors.insert(text.into(), values);
        self
    }

    pub fn with_embedder(mut self, f: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.embedder = Some(Arc::new(f));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(text) {
            return v.clone();
        }
        match &self.embedder {
            Some(f) => f(text),
            None => hashed_bag_of_words(text, self.embedding_dim),
        }
    }
}

impl Transport for ScriptedTransport {
    fn kind(&self) -> TransportKind {
        TransportKind::ScriptedMock
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if let Some(next) = self.queue.lock().expect("queue lock poisoned").pop_front() {
            return next;
        }
        self.rules
            .iter()
            .find(|r| request.user_message.contains(&r.contains))
            .map(|r| r.response.clone())
            .or_else(|| self.default_response.clone())
            .ok_or_else(|| GatewayError::transport("scripted transport has no response for this request", false))
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }
}

/// Signed feature hashing of lowercased heuristic tokens. Slot 0 carries a
/// constant bias so that no text maps to the zero vector.
pub fn hashed_bag_of_words(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    let counter = TokenCounter::heuristic();
    for (s, e) in counter.offsets(text) {
        let h = fnv1a(text[s..e].to_lowercase().as_bytes());
        let slot = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    v
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(feature = "http")]
pub use http::HttpTransport;

#[cfg(feature = "http")]
mod http {
    use super::*;
    use serde_json::{json, Value};

    /// Live transport for OpenAI-compatible `/chat/completions` and `/embeddings`.
    #[derive(Debug, Clone)]
    pub struct HttpTransport {
        endpoint: String,
        embedding_model: String,
        api_key: Option<String>,
        retry: RetryPolicy,
        agent: ureq::Agent,
    }

    impl HttpTransport {
        pub fn new(endpoint: impl Into<String>, embedding_model: impl Into<String>) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .http_status_as_error(false)
                .build()
                .into();
            Self {
                endpoint: endpoint.into().trim_end_matches('/').to_string(),
                embedding_model: embedding_model.into(),
                api_key: None,
                retry: RetryPolicy::default(),
                agent,
            }
        }

        /// Reads the credential from [`API_KEY_ENV`].
        pub fn with_env_credential(mut self) -> Self {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            self
        }

        pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
            self.api_key = Some(key.into());
            self
        }

        pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
            self.retry = retry;
            self
        }

        fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
            let key = self
                .api_key
                .as_deref()
                .ok_or_else(|| GatewayError::Auth(format!("{API_KEY_ENV} is not set")))?;
            let url = format!("{}/{}", self.endpoint, path);
            let mut resp = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {key}"))
                .send_json(body)
                .map_err(|e| GatewayError::transport(format!("{url}: {e}"), true))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| GatewayError::transport(format!("{url}: {e}"), true))?;
            match status {
                200..=299 => serde_json::from_str(&text)
                    .map_err(|e| GatewayError::transport(format!("{url}: bad JSON: {e}"), false)),
                401 | 403 => Err(GatewayError::Auth(format!("{status}: {text}"))),
                429 => Err(GatewayError::RateLimited(text)),
                500..=599 => Err(GatewayError::transport(format!("{status}: {text}"), true)),
                _ => Err(GatewayError::transport(format!("{status}: {text}"), false)),
            }
        }
    }

    impl Transport for HttpTransport {
        fn kind(&self) -> TransportKind {
            TransportKind::LiveHttp
        }

        fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
            let body = json!({
                "model": request.model_name,
                "messages": [
                    {"role": "system", "content": request.system_message},
                    {"role": "user", "content": request.user_message},
                ],
                "max_tokens": request.max_output_tokens,
                "temperature": request.temperature,
            });
            let value = self.post("chat/completions", &body)?;
            value["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| GatewayError::transport("response has no choices[0].message.content", false))
        }

        fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            let body = json!({ "model": self.embedding_model, "input": texts });
            let value = self.post("embeddings", &body)?;
            let data = value["data"]
                .as_array()
                .ok_or_else(|| GatewayError::transport("response has no data array", false))?;
            let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
            for (pos, item) in data.iter().enumerate() {
                let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                let values = item["embedding"]
                    .as_array()
                    .ok_or_else(|| GatewayError::transport("embedding is not an array", false))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| GatewayError::transport("non-numeric embedding", false)))
                    .collect::<Result<Vec<f64>, _>>()?;
                rows.push((index, values));
            }
            rows.sort_by_key(|(i, _)| *i);
            Ok(rows.into_iter().map(|(_, v)| v).collect())
        }

        fn retry_policy(&self) -> RetryPolicy {
            self.retry
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest {
            system_message: "s".into(),
            user_message: "u".into(),
            model_name: "m".into(),
            max_output_tokens: 16,
            temperature: 0.0,
        }
    }

    #[test]
    fn scripted_passthrough() {
        let t = ScriptedTransport::always("ok");
        assert_eq!(chat(&req(), &t).unwrap(), "ok");
    }

    #[test]
    fn scripted_rules_match_user_message() {
        let t = ScriptedTransport::always("default").with_rule("u", "matched");
        assert_eq!(chat(&req(), &t).unwrap(), "matched");
        let t = ScriptedTransport::new();
        assert!(matches!(chat(&req(), &t), Err(GatewayError::Transport { retryable: false, .. })));
    }

    #[test]
    fn replay_hit_and_miss() {
        let r = req();
        let t = ReplayTransport::from_records([FixtureRecord {
            request_hash: r.content_hash(),
            kind: FixtureKind::Chat,
            response_text: Some("T".into()),
            response_vectors: None,
        }]);
        assert_eq!(chat(&r, &t).unwrap(), "T");
        let mut other = req();
        other.user_message = "different".into();
        assert!(matches!(chat(&other, &t), Err(GatewayError::ReplayMiss { .. })));
    }

    #[test]
    fn retries_transient_errors_then_succeeds() {
        let t = ScriptedTransport::always("done").with_queued([
            Err(GatewayError::RateLimited("slow".into())),
            Err(GatewayError::transport("reset", true)),
        ]);
        assert_eq!(chat(&req(), &t).unwrap(), "done");
    }

    #[test]
    fn rate_limit_surfaces_after_retries_exhausted() {
        let errs = (0..4).map(|_| Err(GatewayError::RateLimited("slow".into())));
        let t = ScriptedTransport::always("never").with_queued(errs);
        assert!(matches!(chat(&req(), &t), Err(GatewayError::RateLimited(_))));
    }

    #[test]
    fn auth_error_is_not_retried() {
        let t = ScriptedTransport::always("after").with_queued([Err(GatewayError::Auth("no".into()))]);
        assert!(matches!(chat(&req(), &t), Err(GatewayError::Auth(_))));
        // the fallback response is still queued behind, proving no retry happened
        assert_eq!(chat(&req(), &t).unwrap(), "after");
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_retries, 3);
        let delays: Vec<u64> = (0..3).map(|i| p.delay_for(i).as_secs()).collect();
        assert_eq!(delays, vec![1, 2, 4]);
    }

    #[test]
    fn invalid_requests_rejected() {
        let mut r = req();
        r.model_name.clear();
        assert!(matches!(chat(&r, &ScriptedTransport::always("x")), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn embed_normalizes_three_four_five() {
        let t = ScriptedTransport::new().with_vector("a", vec![3.0, 4.0]);
        let v = embed(&["a".to_string()], &t).unwrap();
        assert_eq!(v[0].values, vec![0.6, 0.8]);
        assert!(embed(&[], &t).unwrap().is_empty());
    }

    #[test]
    fn embed_rejects_ragged_vectors() {
        let t = ScriptedTransport::new()
            .with_vector("a", vec![1.0, 0.0])
            .with_vector("b", vec![1.0, 0.0, 0.0]);
        let err = embed(&["a".to_string(), "b".to_string()], &t).unwrap_err();
        assert_eq!(err, GatewayError::DimensionMismatch { expected: 2, got: 3 });
    }

    #[test]
    fn recording_then_replay_is_identical() {
        let live = ScriptedTransport::always("<answer>[(1,2)]</answer>");
        let rec = RecordingTransport::new(live);
        let texts = vec!["x y".to_string(), "z".to_string(), "w w".to_string()];
        let first = embed(&texts, &rec).unwrap();
        let reply = chat(&req(), &rec).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.jsonl");
        rec.save(&path).unwrap();
        let replay = ReplayTransport::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(embed(&texts, &replay).unwrap(), first);
        assert_eq!(chat(&req(), &replay).unwrap(), reply);
    }

    #[test]
    fn hashed_embedding_is_deterministic_and_nonzero() {
        let a = hashed_bag_of_words("Click the Save button", 64);
        let b = hashed_bag_of_words("click the save BUTTON", 64);
        assert_eq!(a, b);
        assert!(EmbeddingVector::new(hashed_bag_of_words("", 8)).normalized().is_some());
    }
}
