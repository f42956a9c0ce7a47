//! The end-to-end pipeline behind `select` and `run`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use icat_core::data::{load_dataset, sample_subset, AnswerType, Dataset, Exemplar, TargetItem};
use icat_core::embed::{EmbeddingProvider, RemoteEmbedder, RemoteEmbedderConfig};
use icat_core::eval::{Metric, RunOutcome};
use icat_core::llm::{
    BackendKind, CompletionBackend, CompletionFailure, CompletionRecord, LlmClient, RateLimiter, RemoteChatBackend,
    RemoteChatConfig, ReplayBackend,
};
use icat_core::prompt::{self, ParsedCompletion, PromptMode, PromptRecord, TemplateSet};
use icat_core::select::{SelectionConfig, SelectionMethod, SelectionResult, Selector, StaticManifest};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{BackendChoice, DatasetSpec, EmbedderChoice, RunManifest};

/// Everything `eval` needs about one test item, so scoring never goes back
/// to the datasets or the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub test_id: String,
    pub dataset: String,
    pub method: String,
    pub gold: String,
    pub answer_type: AnswerType,
    pub prompt_hash: String,
    pub exemplar_ids: Vec<String>,
    pub backend: BackendKind,
    pub raw_text: Option<String>,
    pub error: Option<CompletionFailure>,
    pub parsed: ParsedCompletion,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub selections: Vec<SelectionResult>,
    pub prompts: Vec<PromptRecord>,
    pub completions: Vec<CompletionRecord>,
    pub items: Vec<ItemResult>,
}

fn load(spec: &DatasetSpec, m: &RunManifest) -> Result<Dataset, CliError> {
    Ok(load_dataset(m.resolve(&spec.path), spec.format)?)
}

pub fn load_targets(m: &RunManifest) -> Result<Vec<TargetItem>, CliError> {
    let targets = load(&m.target, m)?.into_targets().ok_or_else(|| {
        CliError::config(format!("{} holds exemplars, not target items", m.target.path.display()))
    })?;
    Ok(match m.target.sample {
        Some(n) => sample_subset(&targets, n, m.target.sample_seed),
        None => targets,
    })
}

pub fn load_pool(m: &RunManifest) -> Result<Vec<Exemplar>, CliError> {
    let mut pool = Vec::new();
    for spec in &m.transfer {
        let items = load(spec, m)?.into_exemplars().ok_or_else(|| {
            CliError::config(format!("{} holds target items, not exemplars", spec.path.display()))
        })?;
        pool.extend(match spec.sample {
            Some(n) => sample_subset(&items, n, spec.sample_seed),
            None => items,
        });
    }
    Ok(pool)
}

pub fn build_provider(m: &RunManifest) -> Result<Arc<EmbeddingProvider>, CliError> {
    let e = &m.embedding;
    let provider = match e.kind {
        EmbedderChoice::Local => EmbeddingProvider::local(e.seed, e.dim),
        EmbedderChoice::Remote => {
            let endpoint = e.endpoint.clone().ok_or_else(|| CliError::config("remote embedding needs an endpoint"))?;
            let model = e.model.clone().ok_or_else(|| CliError::config("remote embedding needs a model"))?;
            let mut config = RemoteEmbedderConfig::new(endpoint, model);
            if let Some(k) = &e.api_key_env {
                config.api_key_env = k.clone();
            }
            EmbeddingProvider::new(Arc::new(RemoteEmbedder::new(config, None)), e.scheme)
        }
    }
    .with_scheme(e.scheme);
    let provider = match &m.cache_dir {
        Some(dir) => provider.with_cache_dir(dir)?,
        None => provider,
    };
    Ok(Arc::new(provider))
}

pub fn templates(m: &RunManifest) -> Result<TemplateSet, CliError> {
    let mut t = match &m.prompt.template_dir {
        Some(dir) => TemplateSet::from_dir(m.resolve(dir))?,
        None if m.prompt.template_version == "v1" => TemplateSet::builtin(),
        None => {
            return Err(CliError::config(format!(
                "template version '{}' is not built in; set prompt.template_dir",
                m.prompt.template_version
            )))
        }
    };
    if let Some(n) = m.prompt.numbering {
        t.numbering = n;
    }
    if let Some(b) = m.prompt.token_budget {
        t.token_budget = b;
    }
    Ok(t)
}

fn selection_config(m: &RunManifest) -> Result<SelectionConfig, CliError> {
    let s = &m.selection;
    let static_manifest = match &s.static_manifest {
        Some(p) => Some(StaticManifest::load(m.resolve(p))?),
        None if s.method == SelectionMethod::Static => {
            return Err(CliError::config("selection.method = \"static\" needs selection.static_manifest"))
        }
        None => None,
    };
    Ok(SelectionConfig {
        method: s.method,
        k: s.k,
        lambda: s.lambda,
        seed: s.seed,
        ridge_scale: s.ridge_scale,
        mean_norm_mode: s.mean_norm_mode,
        per_source_quota: s.per_source_quota.clone(),
        static_manifest,
    })
}

/// One selection per target, in target order. Zero-shot runs select nothing.
pub fn select_all(m: &RunManifest, pool: &[Exemplar], targets: &[TargetItem]) -> Result<Vec<SelectionResult>, CliError> {
    if m.prompt.mode == PromptMode::ZeroShotCot {
        return Ok(Vec::new());
    }
    let config = selection_config(m)?;
    let provider = match config.method {
        SelectionMethod::Ftd | SelectionMethod::Knn | SelectionMethod::Mmr => Some(build_provider(m)?),
        _ => None,
    };
    let selector = Selector::new(config, pool.to_vec(), provider)?;
    targets
        .iter()
        .map(|t| selector.select(&t.id, &t.question).map_err(CliError::from))
        .collect()
}

pub fn render_all(
    m: &RunManifest,
    pool: &[Exemplar],
    targets: &[TargetItem],
    selections: &[SelectionResult],
) -> Result<Vec<PromptRecord>, CliError> {
    let t = templates(m)?;
    targets
        .iter()
        .enumerate()
        .map(|(i, target)| {
            let rec = match selections.get(i) {
                Some(sel) => prompt::build_prompt(m.prompt.mode, sel, pool, target, &t)?,
                None => prompt::render_prompt(m.prompt.mode, &[], target, &t)?,
            };
            Ok(rec)
        })
        .collect()
}

pub fn backend(m: &RunManifest) -> Result<Arc<dyn CompletionBackend>, CliError> {
    let b = &m.backend;
    Ok(match b.kind {
        BackendChoice::Replay => {
            let path = b.fixtures.as_ref().ok_or_else(|| CliError::config("replay backend needs backend.fixtures"))?;
            Arc::new(ReplayBackend::load(m.resolve(path))?)
        }
        BackendChoice::Remote => {
            let endpoint = b.endpoint.clone().ok_or_else(|| CliError::config("remote backend needs backend.endpoint"))?;
            let mut config = RemoteChatConfig::new(endpoint);
            if let Some(k) = &b.api_key_env {
                config.api_key_env = k.clone();
            }
            let limiter = b.requests_per_minute.map(|r| Arc::new(RateLimiter::per_minute(r)));
            Arc::new(RemoteChatBackend::new(config, limiter))
        }
    })
}

pub fn client(m: &RunManifest) -> Result<LlmClient, CliError> {
    let client = LlmClient::new(backend(m)?, m.backend.max_remote_calls);
    Ok(match &m.cache_dir {
        Some(dir) => client.with_cache_dir(dir)?,
        None => client,
    })
}

/// select → render → complete → parse.
pub fn run(m: &RunManifest) -> Result<RunArtifacts, CliError> {
    let targets = load_targets(m)?;
    let pool = load_pool(m)?;
    let selections = select_all(m, &pool, &targets)?;
    let prompts = render_all(m, &pool, &targets, &selections)?;
    let completions = client(m)?.run_batch(&prompts, &m.generation, m.backend.parallelism)?;
    let method = m.method_label();
    let items = targets
        .iter()
        .zip(&prompts)
        .zip(&completions)
        .map(|((t, p), c)| ItemResult {
            test_id: t.id.clone(),
            dataset: t.dataset.clone(),
            method: method.clone(),
            gold: t.gold_answer.clone(),
            answer_type: t.answer_type,
            prompt_hash: p.content_hash.clone(),
            exemplar_ids: p.exemplar_ids.clone(),
            backend: c.backend,
            raw_text: c.raw_text.clone(),
            error: c.error.clone(),
            parsed: match &c.raw_text {
                Some(raw) => prompt::parse_completion(raw, m.prompt.mode, t.answer_type),
                None => prompt::parse_completion("", m.prompt.mode, t.answer_type),
            },
        })
        .collect();
    Ok(RunArtifacts {
        selections,
        prompts,
        completions,
        items,
    })
}

/// Score items; `metric` overrides each dataset's default.
pub fn evaluate(items: &[ItemResult], metric: Option<Metric>) -> Vec<RunOutcome> {
    items
        .iter()
        .map(|i| {
            RunOutcome::new(
                i.test_id.clone(),
                i.method.clone(),
                i.dataset.clone(),
                i.prompt_hash.clone(),
                i.parsed.clone(),
                i.gold.clone(),
                metric.unwrap_or_else(|| Metric::for_dataset(&i.dataset)),
                i.answer_type,
            )
        })
        .collect()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CliError::config(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    write_file(path, text)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::config(format!("writing {}: {e}", path.display())))
}

pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}
