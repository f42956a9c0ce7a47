//! Completion backends.
//!
//! [`LlmClient`] wraps a [`CompletionBackend`] with a content-addressed
//! response cache keyed on `(prompt hash, generation params)` and a cap on
//! remote calls. [`ReplayBackend`] serves recorded fixtures and refuses to
//! answer anything it has no recording for.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use crate::http::RateLimiter;
use crate::http::{self, HttpFailure, RetryPolicy};
use crate::prompt::PromptRecord;
use crate::store::{ContentStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no replay fixture for prompt {prompt_hash}")]
    ReplayMiss { prompt_hash: String },
    #[error("remote call cap of {cap} reached")]
    BudgetExceeded { cap: u64 },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("fixture {path} line {line}: {message}")]
    Fixture { path: String, line: usize, message: String },
    #[error(transparent)]
    Cache(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Backend,
    ReplayMiss,
    Budget,
    Config,
}

impl LlmError {
    pub fn kind(&self) -> FailureKind {
        match self {
            LlmError::BackendUnavailable { .. } | LlmError::Backend(_) | LlmError::Cache(_) => FailureKind::Backend,
            LlmError::ReplayMiss { .. } => FailureKind::ReplayMiss,
            LlmError::BudgetExceeded { .. } => FailureKind::Budget,
            LlmError::InvalidParams(_)
            | LlmError::InvalidParallelism
            | LlmError::MissingCredentials(_)
            | LlmError::Fixture { .. } => FailureKind::Config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            frequency_penalty: 0.8,
            presence_penalty: 0.6,
            max_tokens: 900,
            model_id: "gpt-3.5-turbo".into(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        let finite = [self.temperature, self.frequency_penalty, self.presence_penalty]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.temperature < 0.0 {
            return Err(LlmError::InvalidParams(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidParams("max_tokens must be >= 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(LlmError::InvalidParams("empty model id".into()));
        }
        Ok(())
    }

    /// Stable string form used in cache and fixture keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

fn fixture_key(prompt_hash: &str, params: &GenerationParams) -> String {
    format!("{prompt_hash}\u{1f}{}", params.canonical())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Cache,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionFailure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub test_id: String,
    pub prompt_hash: String,
    pub params: GenerationParams,
    pub raw_text: Option<String>,
    pub error: Option<CompletionFailure>,
    /// Wall time of the backend call; zero for cache and replay hits.
    pub latency_ms: u64,
    pub backend: BackendKind,
}

impl CompletionRecord {
    pub fn succeeded(&self) -> bool {
        self.raw_text.is_some()
    }
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, prompt: &PromptRecord, params: &GenerationParams) -> Result<String, LlmError>;
}

/// One recorded response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_hash: String,
    pub params: GenerationParams,
    pub raw_text: String,
}

pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let responses = entries
            .into_iter()
            .map(|e| (fixture_key(&e.prompt_hash, &e.params), e.raw_text))
            .collect();
        Self { responses }
    }

    /// Load JSON-lines fixtures; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self::from_entries(read_fixtures(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, prompt: &PromptRecord, params: &GenerationParams) -> Result<String, LlmError> {
        self.responses
            .get(&fixture_key(&prompt.content_hash, params))
            .cloned()
            .ok_or_else(|| LlmError::ReplayMiss {
                prompt_hash: prompt.content_hash.clone(),
            })
    }
}

pub fn read_fixtures(path: impl AsRef<Path>) -> Result<Vec<FixtureEntry>, LlmError> {
    let path = path.as_ref();
    let bad = |line: usize, message: String| LlmError::Fixture {
        path: path.display().to_string(),
        line,
        message,
    };
    let file = fs::File::open(path).map_err(|e| bad(0, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_fixtures(path: impl AsRef<Path>, entries: &[FixtureEntry]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl RemoteChatConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            initial_backoff_ms: default_backoff(),
        }
    }
}

/// OpenAI-style chat-completions client. The prompt is sent as a single
/// user message.
pub struct RemoteChatBackend {
    config: RemoteChatConfig,
    limiter: Option<Arc<RateLimiter>>,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteChatConfig, limiter: Option<Arc<RateLimiter>>) -> Self {
        Self { config, limiter }
    }
}

impl CompletionBackend for RemoteChatBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(&self, prompt: &PromptRecord, params: &GenerationParams) -> Result<String, LlmError> {
        // an empty variable name means the endpoint takes no credentials
        let key = match self.config.api_key_env.as_str() {
            "" => None,
            var => Some(std::env::var(var).map_err(|_| LlmError::MissingCredentials(var.to_owned()))?),
        };
        let body = json!({
            "model": params.model_id,
            "messages": [{"role": "user", "content": prompt.rendered}],
            "temperature": params.temperature,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
            "max_tokens": params.max_tokens,
        });
        let policy = RetryPolicy {
            max_retries: self.config.max_retries,
            initial_backoff: Duration::from_millis(self.config.initial_backoff_ms),
            timeout: Duration::from_secs(self.config.timeout_secs),
        };
        let value = http::post_json(&self.config.endpoint, key.as_deref(), &body, &policy, self.limiter.as_deref())
            .map_err(|e| match e {
                HttpFailure::Transient { attempts, last } => LlmError::BackendUnavailable { attempts, reason: last },
                HttpFailure::Fatal(msg) => LlmError::Backend(msg),
            })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| LlmError::Backend("response has no choices[0].message.content".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct CachedCompletion {
    raw_text: String,
}

pub struct LlmClient {
    backend: Arc<dyn CompletionBackend>,
    cache: Option<Arc<ContentStore>>,
    max_remote_calls: u64,
    remote_calls: AtomicU64,
}

impl LlmClient {
    /// `max_remote_calls` caps calls that reach a remote backend; it has no
    /// effect on replay.
    pub fn new(backend: Arc<dyn CompletionBackend>, max_remote_calls: u64) -> Self {
        Self {
            backend,
            cache: None,
            max_remote_calls,
            remote_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, store: Arc<ContentStore>) -> Self {
        self.cache = Some(store);
        self
    }

    pub fn with_cache_dir(self, dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let store = ContentStore::open(dir.as_ref().join("completions"))?;
        Ok(self.with_cache(Arc::new(store)))
    }

    pub fn remote_calls(&self) -> u64 {
        self.remote_calls.load(Ordering::SeqCst)
    }

    fn reserve_remote_call(&self) -> Result<(), LlmError> {
        self.remote_calls
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.max_remote_calls).then_some(n + 1))
            .map(|_| ())
            .map_err(|_| LlmError::BudgetExceeded {
                cap: self.max_remote_calls,
            })
    }

    fn cache_key(prompt: &PromptRecord, params: &GenerationParams) -> String {
        ContentStore::key(&["completion", &prompt.content_hash, &params.canonical()])
    }

    /// Text of one completion: cache first, then the backend. Only remote
    /// responses are written to the cache.
    pub fn complete(&self, prompt: &PromptRecord, params: &GenerationParams) -> Result<CompletionRecord, LlmError> {
        params.validate()?;
        let record = |raw: String, latency_ms: u64, backend: BackendKind| CompletionRecord {
            test_id: prompt.test_id.clone(),
            prompt_hash: prompt.content_hash.clone(),
            params: params.clone(),
            raw_text: Some(raw),
            error: None,
            latency_ms,
            backend,
        };

        if let Some(store) = &self.cache {
            let key = Self::cache_key(prompt, params);
            if let Some(hit) = store.get::<CachedCompletion>(&key)? {
                return Ok(record(hit.raw_text, 0, BackendKind::Cache));
            }
        }

        let kind = self.backend.kind();
        if kind == BackendKind::Remote {
            self.reserve_remote_call()?;
        }
        let start = Instant::now();
        let raw = self.backend.complete(prompt, params)?;
        let latency_ms = match kind {
            BackendKind::Remote => start.elapsed().as_millis() as u64,
            _ => 0,
        };
        if let (Some(store), BackendKind::Remote) = (&self.cache, kind) {
            let key = Self::cache_key(prompt, params);
            store.put(&key, &CachedCompletion { raw_text: raw.clone() })?;
        }
        Ok(record(raw, latency_ms, kind))
    }

    /// Like [`complete`](Self::complete) but folds errors into the record.
    pub fn complete_record(&self, prompt: &PromptRecord, params: &GenerationParams) -> CompletionRecord {
        self.complete(prompt, params).unwrap_or_else(|e| CompletionRecord {
            test_id: prompt.test_id.clone(),
            prompt_hash: prompt.content_hash.clone(),
            params: params.clone(),
            raw_text: None,
            error: Some(CompletionFailure {
                kind: e.kind(),
                message: e.to_string(),
            }),
            latency_ms: 0,
            backend: self.backend.kind(),
        })
    }

    /// Complete every prompt with at most `parallelism` calls in flight.
    /// Output order follows input order; failures stay per item.
    pub fn run_batch(
        &self,
        prompts: &[PromptRecord],
        params: &GenerationParams,
        parallelism: usize,
    ) -> Result<Vec<CompletionRecord>, LlmError> {
        if parallelism == 0 {
            return Err(LlmError::InvalidParallelism);
        }
        params.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        Ok(pool.install(|| prompts.par_iter().map(|p| self.complete_record(p, params)).collect()))
    }
}
