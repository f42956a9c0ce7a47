//! Tokenization and token/sentence embeddings.
//!
//! Two embedders are provided: [`LocalEmbedder`], a deterministic
//! hash-seeded embedder used offline and in tests, and [`RemoteEmbedder`],
//! which talks to an OpenAI-style `/embeddings` endpoint. Both sit behind
//! [`EmbeddingProvider`], which owns the tokenization scheme and the
//! optional on-disk cache.

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::http::{self, HttpFailure, RateLimiter, RetryPolicy};
use crate::store::{ContentStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("text has no tokens after normalization")]
    EmptyText,
    #[error("embedding backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("embedding backend error: {0}")]
    Backend(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Cache(#[from] StoreError),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::BackendUnavailable { .. })
    }
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch { expected: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Tokenization rule. Recorded alongside every embedding and divergence
/// so runs can be reproduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// Lowercase, drop every non-alphanumeric non-whitespace character,
    /// split on whitespace.
    #[default]
    Simple,
    /// [`TokenScheme::Simple`] followed by English stopword removal.
    SimpleNoStopwords,
}

impl TokenScheme {
    pub fn id(&self) -> &'static str {
        match self {
            TokenScheme::Simple => "lower-strip-ws",
            TokenScheme::SimpleNoStopwords => "lower-strip-ws-nostop",
        }
    }
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

pub fn tokenize(text: &str, scheme: TokenScheme) -> Result<Vec<String>, EmbedError> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<String> = cleaned
        .split_whitespace()
        .filter(|t| scheme != TokenScheme::SimpleNoStopwords || !STOPWORDS.contains(t))
        .map(str::to_owned)
        .collect();
    if tokens.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    Ok(tokens)
}

/// Token-aligned embeddings of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingSet {
    pub tokens: Vec<String>,
    pub vectors: Vec<EmbeddingVector>,
    pub source_text: String,
    pub embedder_id: String,
    pub scheme: TokenScheme,
}

impl TokenEmbeddingSet {
    /// Checks the alignment and shared-dimension invariants.
    pub fn new(
        tokens: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        source_text: impl Into<String>,
        embedder_id: impl Into<String>,
        scheme: TokenScheme,
    ) -> Result<Self, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        if tokens.len() != vectors.len() {
            return Err(EmbedError::DimensionMismatch {
                expected: tokens.len(),
                got: vectors.len(),
            });
        }
        let dim = vectors[0].dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        Ok(Self {
            tokens,
            vectors,
            source_text: source_text.into(),
            embedder_id: embedder_id.into(),
            scheme,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Mean of the token vectors.
    pub fn mean_pooled(&self) -> EmbeddingVector {
        let n = self.vectors.len() as f64;
        let mut acc = vec![0.0; self.dim()];
        for v in &self.vectors {
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        EmbeddingVector(acc)
    }
}

/// A backend mapping strings to vectors, one vector per input.
pub trait Embedder: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> String;

    fn embed_batch(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Whether sentence vectors come from embedding the whole text
    /// (`true`) or from mean-pooling token vectors (`false`).
    fn native_sentence(&self) -> bool {
        false
    }
}

/// Deterministic offline embedder: every token maps to a unit vector drawn
/// from a standard normal seeded by `sha256(seed, token)`.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    seed: u64,
    dim: usize,
}

impl LocalEmbedder {
    pub const TEST_DIM: usize = 32;
    pub const REALISTIC_DIM: usize = 384;

    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    pub fn token_vector(&self, token: &str) -> EmbeddingVector {
        let mut material = Vec::with_capacity(8 + token.len());
        material.extend_from_slice(&self.seed.to_le_bytes());
        material.extend_from_slice(token.as_bytes());
        let digest = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&material)
        };
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        EmbeddingVector(v)
    }
}

impl Embedder for LocalEmbedder {
    fn id(&self) -> String {
        format!("local-hash:seed={}:dim={}", self.seed, self.dim)
    }

    fn embed_batch(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(inputs.iter().map(|t| self.token_vector(t)).collect())
    }
}

/// Settings for an OpenAI-compatible embeddings endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_key_env() -> String {
    "ICAT_EMBED_API_KEY".to_owned()
}
fn default_timeout_secs() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl RemoteEmbedderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_retries(),
            initial_backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    api_key: Option<String>,
    limiter: Option<Arc<RateLimiter>>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig, limiter: Option<Arc<RateLimiter>>) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        Self {
            config,
            api_key,
            limiter,
        }
    }

    fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.config.max_retries,
            initial_backoff: Duration::from_millis(self.config.initial_backoff_ms),
            timeout: Duration::from_secs_f64(self.config.timeout_secs),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.config.endpoint, self.config.model)
    }

    fn native_sentence(&self) -> bool {
        true
    }

    fn embed_batch(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::json!({ "model": self.config.model, "input": inputs });
        let value = http::post_json(
            &self.config.endpoint,
            self.api_key.as_deref(),
            &body,
            &self.policy(),
            self.limiter.as_deref(),
        )
        .map_err(|f| match f {
            HttpFailure::Transient { attempts, last } => EmbedError::BackendUnavailable {
                attempts,
                reason: last,
            },
            HttpFailure::Fatal(msg) => EmbedError::Backend(msg),
        })?;
        let mut resp: EmbeddingsResponse =
            serde_json::from_value(value).map_err(|e| EmbedError::Backend(e.to_string()))?;
        if resp.data.len() != inputs.len() {
            return Err(EmbedError::Backend(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                resp.data.len()
            )));
        }
        resp.data.sort_by_key(|d| d.index.unwrap_or(0));
        let vectors = resp
            .data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = vectors[0].dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        Ok(vectors)
    }
}

/// Embedder + tokenization scheme + optional persistent cache.
///
/// Cache entries are keyed by `(embedder_id, scheme, kind, sha256(text))`.
/// A cache hit never contacts the backend; the count of backend requests is
/// exposed through [`EmbeddingProvider::backend_requests`].
pub struct EmbeddingProvider {
    embedder: Arc<dyn Embedder>,
    scheme: TokenScheme,
    cache: Option<Arc<ContentStore>>,
    requests: AtomicU64,
}

impl EmbeddingProvider {
    pub fn new(embedder: Arc<dyn Embedder>, scheme: TokenScheme) -> Self {
        Self {
            embedder,
            scheme,
            cache: None,
            requests: AtomicU64::new(0),
        }
    }

    pub fn local(seed: u64, dim: usize) -> Self {
        Self::new(Arc::new(LocalEmbedder::new(seed, dim)), TokenScheme::default())
    }

    pub fn with_scheme(mut self, scheme: TokenScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_cache(mut self, store: Arc<ContentStore>) -> Self {
        self.cache = Some(store);
        self
    }

    pub fn with_cache_dir(self, dir: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let store = ContentStore::open(dir.into().join("embeddings"))?;
        Ok(self.with_cache(Arc::new(store)))
    }

    pub fn embedder_id(&self) -> String {
        self.embedder.id()
    }

    pub fn scheme(&self) -> TokenScheme {
        self.scheme
    }

    /// Number of calls made to the underlying embedder.
    pub fn backend_requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn cache_key(&self, kind: &str, text: &str) -> String {
        ContentStore::key(&[
            &self.embedder.id(),
            self.scheme.id(),
            kind,
            &crate::sha256_hex(text),
        ])
    }

    fn call(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.embedder.embed_batch(inputs)
    }

    pub fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddingSet, EmbedError> {
        let tokens = tokenize(text, self.scheme)?;
        let key = self.cache_key("tokens", text);
        let cached = match &self.cache {
            Some(store) => store.get::<Vec<EmbeddingVector>>(&key)?,
            None => None,
        };
        let vectors = match cached {
            Some(v) if v.len() == tokens.len() => v,
            _ => {
                let v = self.call(&tokens)?;
                if let Some(store) = &self.cache {
                    store.put(&key, &v)?;
                }
                v
            }
        };
        TokenEmbeddingSet::new(tokens, vectors, text, self.embedder.id(), self.scheme)
    }

    pub fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if !self.embedder.native_sentence() {
            return Ok(self.embed_tokens(text)?.mean_pooled());
        }
        tokenize(text, self.scheme)?;
        let key = self.cache_key("sentence", text);
        if let Some(store) = &self.cache {
            if let Some(v) = store.get::<EmbeddingVector>(&key)? {
                return Ok(v);
            }
        }
        let v = self
            .call(&[text.to_owned()])?
            .pop()
            .ok_or_else(|| EmbedError::Backend("empty embedding response".into()))?;
        if let Some(store) = &self.cache {
            store.put(&key, &v)?;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_default_rule() {
        assert_eq!(
            tokenize("Who voices Jarvis?", TokenScheme::Simple).unwrap(),
            vec!["who", "voices", "jarvis"]
        );
        assert!(matches!(tokenize("  ", TokenScheme::Simple), Err(EmbedError::EmptyText)));
        assert!(matches!(tokenize("?!", TokenScheme::Simple), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn tokenize_aqua_rat_example() {
        let toks = tokenize(
            "A trader sold an article at a profit of 20% for Rs.360.",
            TokenScheme::Simple,
        )
        .unwrap();
        assert_eq!(toks.len(), 12);
        assert_eq!(toks.first().unwrap(), "a");
        assert_eq!(toks.last().unwrap(), "rs360");
    }

    #[test]
    fn stopword_scheme_drops_function_words() {
        let toks = tokenize("Who is the spouse of Paul Bettany?", TokenScheme::SimpleNoStopwords)
            .unwrap();
        assert_eq!(toks, vec!["spouse", "paul", "bettany"]);
    }

    #[test]
    fn identical_tokens_share_a_vector() {
        let p = EmbeddingProvider::local(7, 32);
        let set = p.embed_tokens("a a").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.vectors[0], set.vectors[1]);
        let norm: f64 = set.vectors[0].values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_embedder_is_deterministic() {
        let a = EmbeddingProvider::local(7, 32).embed_tokens("Who voices Jarvis?").unwrap();
        let b = EmbeddingProvider::local(7, 32).embed_tokens("Who voices Jarvis?").unwrap();
        assert_eq!(a, b);
        let c = EmbeddingProvider::local(8, 32).embed_tokens("Who voices Jarvis?").unwrap();
        assert_ne!(a.vectors, c.vectors);
    }

    #[test]
    fn sentence_is_mean_of_tokens() {
        let p = EmbeddingProvider::local(3, 16);
        let single = p.embed_sentence("jarvis").unwrap();
        assert_eq!(single, p.embed_tokens("jarvis").unwrap().vectors[0]);

        let set = p.embed_tokens("iron man").unwrap();
        let s = p.embed_sentence("iron man").unwrap();
        for i in 0..16 {
            let expect = (set.vectors[0].values()[i] + set.vectors[1].values()[i]) / 2.0;
            assert_eq!(s.values()[i], expect);
        }
    }

    #[test]
    fn cached_calls_skip_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cold = EmbeddingProvider::local(7, 32);
        let warm = EmbeddingProvider::local(7, 32).with_cache_dir(dir.path()).unwrap();
        let text = "What is the mouth of the Naches River?";

        let first = warm.embed_sentence(text).unwrap();
        assert_eq!(warm.backend_requests(), 1);
        let second = warm.embed_sentence(text).unwrap();
        assert_eq!(warm.backend_requests(), 1);
        assert_eq!(first, second);
        assert_eq!(first, cold.embed_sentence(text).unwrap());

        // a fresh provider on the same directory is served from disk
        let reopened = EmbeddingProvider::local(7, 32).with_cache_dir(dir.path()).unwrap();
        assert_eq!(reopened.embed_tokens(text).unwrap(), cold.embed_tokens(text).unwrap());
        assert_eq!(reopened.backend_requests(), 0);
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(matches!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbedError::NonFinite)));
    }

    #[test]
    fn mismatched_set_rejected() {
        let v = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let w = EmbeddingVector::new(vec![1.0]).unwrap();
        let err = TokenEmbeddingSet::new(
            vec!["a".into(), "b".into()],
            vec![v, w],
            "a b",
            "x",
            TokenScheme::Simple,
        );
        assert!(matches!(err, Err(EmbedError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn token_vector_alignment(text in "[a-zA-Z0-9 ,.?!%]{0,60}", seed in 0u64..1000) {
            let p = EmbeddingProvider::local(seed, 8);
            match p.embed_tokens(&text) {
                Ok(set) => {
                    prop_assert_eq!(set.tokens.len(), set.vectors.len());
                    prop_assert!(set.vectors.iter().all(|v| v.dim() == 8));
                    prop_assert_eq!(&set.tokens, &tokenize(&text, TokenScheme::Simple).unwrap());
                }
                Err(e) => prop_assert!(matches!(e, EmbedError::EmptyText)),
            }
        }
    }
}
