//! In-context ability transfer: pick demonstration exemplars from
//! rationale-annotated transfer datasets, render decomposition-inducing
//! prompts, run them against a completion backend and score the answers.
//!
//! The modules follow the pipeline order:
//!
//! - [`embed`]: tokenization and token/sentence embeddings (local or remote)
//! - [`gauss`]: Gaussian fitting over token embeddings and the Frechet term distance
//! - [`select`]: exemplar selection (FTD, KNN, MMR, random, curated static)
//! - [`data`]: dataset adapters and the unified JSON-lines schema
//! - [`prompt`]: prompt rendering and completion parsing
//! - [`llm`]: completion backends, response cache, replay fixtures
//! - [`eval`]: EM / cover-EM scoring, aggregation, confusion and McNemar

pub mod data;
pub mod embed;
pub mod eval;
pub mod gauss;
mod http;
pub mod llm;
pub mod prompt;
pub mod select;
pub mod store;

pub use data::{AbilityPayload, Category, Dataset, DecompositionStep, Exemplar, TableContext, TargetItem};
pub use embed::{EmbeddingProvider, EmbeddingVector, LocalEmbedder, TokenEmbeddingSet, TokenScheme};
pub use gauss::{ftd, norm_est, sqrtm_psd, FtdScore, MeanNormMode, TokenGaussian};
pub use llm::{CompletionRecord, GenerationParams, LlmClient};
pub use prompt::{ParsedCompletion, PromptMode, PromptRecord, TemplateSet};
pub use select::{SelectionConfig, SelectionMethod, SelectionResult, Selector};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes.as_ref()))
}
