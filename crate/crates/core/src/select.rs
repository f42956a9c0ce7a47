//! Exemplar selection.
//!
//! Dynamic selectors pick exemplars per test question: FTD (lowest Frechet
//! term distance between token Gaussians), KNN (highest sentence cosine)
//! and MMR (greedy relevance/diversity trade-off). Random selection comes
//! in a static flavor (one draw per seed) and a dynamic one (one draw per
//! test item). Static curated selection validates a hand-written manifest
//! against the pool and its coverage requirements.
//!
//! Ties are always broken by exemplar id, ascending.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Category, Exemplar};
use crate::embed::{EmbedError, EmbeddingProvider, EmbeddingVector, TokenScheme};
use crate::gauss::{self, ftd_prepared, GaussError, MeanNormMode, PreparedGaussian};

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_MMR_LAMBDA: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("exemplar pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("MMR lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("unknown exemplar id '{0}'")]
    UnknownExemplarId(String),
    #[error("duplicate exemplar id '{0}' in manifest")]
    DuplicateId(String),
    #[error("manifest does not cover required categories: {}", join(.missing))]
    CoverageUnsatisfied { missing: Vec<Category> },
    #[error("per-source quota mismatch: {0}")]
    QuotaMismatch(String),
    #[error("dynamic random selection needs a test id")]
    MissingTestId,
    #[error("static selection needs a manifest")]
    MissingManifest,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

fn join(c: &[Category]) -> String {
    c.iter().map(Category::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Ftd,
    Knn,
    Mmr,
    RandomStatic,
    RandomDynamic,
    Static,
}

impl SelectionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMethod::Ftd => "ftd",
            SelectionMethod::Knn => "knn",
            SelectionMethod::Mmr => "mmr",
            SelectionMethod::RandomStatic => "random_static",
            SelectionMethod::RandomDynamic => "random_dynamic",
            SelectionMethod::Static => "static",
        }
    }

    fn needs_embeddings(&self) -> bool {
        matches!(self, SelectionMethod::Ftd | SelectionMethod::Knn | SelectionMethod::Mmr)
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    pub chosen: Vec<String>,
    /// FTD distance, or cosine similarity for KNN/MMR, per scored candidate.
    /// Empty for random and static selection.
    pub scores: BTreeMap<String, f64>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_source_quota: Option<BTreeMap<String, usize>>,
}

impl SelectionResult {
    fn new(method: SelectionMethod, k: usize) -> Self {
        Self {
            method,
            test_id: None,
            chosen: Vec::new(),
            scores: BTreeMap::new(),
            k,
            seed: None,
            lambda: None,
            per_source_quota: None,
        }
    }
}

fn check_pool(pool: &[Exemplar], k: usize) -> Result<(), SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    if k == 0 {
        return Err(SelectError::InvalidK);
    }
    Ok(())
}

/// Indices of `scores` ordered by score (ascending or descending), ties by id.
fn ranked(ids: &[&str], scores: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = if descending {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        };
        by_score.then_with(|| ids[a].cmp(ids[b]))
    });
    order
}

/// Candidate Gaussians prepared once for scoring many test questions.
pub struct FtdIndex {
    ids: Vec<String>,
    prepared: Vec<PreparedGaussian>,
    ridge_scale: f64,
    mode: MeanNormMode,
}

impl FtdIndex {
    pub fn build(
        pool: &[Exemplar],
        provider: &EmbeddingProvider,
        ridge_scale: f64,
        mode: MeanNormMode,
    ) -> Result<Self, SelectError> {
        if pool.is_empty() {
            return Err(SelectError::EmptyPool);
        }
        let prepared = pool
            .par_iter()
            .map(|e| {
                let set = provider.embed_tokens(&e.question)?;
                Ok(PreparedGaussian::new(gauss::norm_est(&set, ridge_scale)?)?)
            })
            .collect::<Result<Vec<_>, SelectError>>()?;
        Ok(Self {
            ids: pool.iter().map(|e| e.id.clone()).collect(),
            prepared,
            ridge_scale,
            mode,
        })
    }

    /// FTD from the test question to every candidate, in pool order.
    pub fn distances(&self, test_question: &str, provider: &EmbeddingProvider) -> Result<Vec<f64>, SelectError> {
        let set = provider.embed_tokens(test_question)?;
        let test = PreparedGaussian::new(gauss::norm_est(&set, self.ridge_scale)?)?;
        self.prepared
            .par_iter()
            .map(|cand| Ok(ftd_prepared(cand, &test, self.mode)?.total))
            .collect()
    }

    pub fn select(
        &self,
        test_question: &str,
        k: usize,
        provider: &EmbeddingProvider,
    ) -> Result<SelectionResult, SelectError> {
        if k == 0 {
            return Err(SelectError::InvalidK);
        }
        let distances = self.distances(test_question, provider)?;
        let ids: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        let order = ranked(&ids, &distances, false);
        let mut result = SelectionResult::new(SelectionMethod::Ftd, k);
        result.chosen = order.iter().take(k).map(|&i| self.ids[i].clone()).collect();
        result.scores = self.ids.iter().cloned().zip(distances).collect();
        Ok(result)
    }
}

/// Pick the `k` candidates whose token Gaussians are closest (FTD) to the
/// test question's.
pub fn select_ftd(
    test_question: &str,
    pool: &[Exemplar],
    k: usize,
    provider: &EmbeddingProvider,
    ridge_scale: f64,
) -> Result<SelectionResult, SelectError> {
    check_pool(pool, k)?;
    FtdIndex::build(pool, provider, ridge_scale, MeanNormMode::Unsquared)?.select(test_question, k, provider)
}

/// Sentence embeddings of the candidate questions.
pub struct SentenceIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl SentenceIndex {
    pub fn build(pool: &[Exemplar], provider: &EmbeddingProvider) -> Result<Self, SelectError> {
        if pool.is_empty() {
            return Err(SelectError::EmptyPool);
        }
        let vectors = pool
            .par_iter()
            .map(|e| provider.embed_sentence(&e.question))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            ids: pool.iter().map(|e| e.id.clone()).collect(),
            vectors,
        })
    }

    fn relevance(&self, query: &EmbeddingVector) -> Vec<f64> {
        self.vectors.iter().map(|v| query.cosine(v)).collect()
    }

    pub fn knn(&self, query: &EmbeddingVector, k: usize) -> SelectionResult {
        let sims = self.relevance(query);
        let ids: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        let order = ranked(&ids, &sims, true);
        let mut result = SelectionResult::new(SelectionMethod::Knn, k);
        result.chosen = order.iter().take(k).map(|&i| self.ids[i].clone()).collect();
        result.scores = self.ids.iter().cloned().zip(sims).collect();
        result
    }

    pub fn mmr(&self, query: &EmbeddingVector, k: usize, lambda: f64) -> Result<SelectionResult, SelectError> {
        let sims = self.relevance(query);
        let ids: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        let order = mmr_order(&ids, &sims, |i, j| self.vectors[i].cosine(&self.vectors[j]), k, lambda)?;
        let mut result = SelectionResult::new(SelectionMethod::Mmr, k);
        result.chosen = order.iter().map(|&i| self.ids[i].clone()).collect();
        result.scores = self.ids.iter().cloned().zip(sims).collect();
        result.lambda = Some(lambda);
        Ok(result)
    }
}

pub fn select_knn(
    test_question: &str,
    pool: &[Exemplar],
    k: usize,
    provider: &EmbeddingProvider,
) -> Result<SelectionResult, SelectError> {
    check_pool(pool, k)?;
    let index = SentenceIndex::build(pool, provider)?;
    Ok(index.knn(&provider.embed_sentence(test_question)?, k))
}

pub fn select_mmr(
    test_question: &str,
    pool: &[Exemplar],
    k: usize,
    lambda: f64,
    provider: &EmbeddingProvider,
) -> Result<SelectionResult, SelectError> {
    check_pool(pool, k)?;
    check_lambda(lambda)?;
    let index = SentenceIndex::build(pool, provider)?;
    index.mmr(&provider.embed_sentence(test_question)?, k, lambda)
}

fn check_lambda(lambda: f64) -> Result<(), SelectError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SelectError::InvalidLambda(lambda));
    }
    Ok(())
}

/// Greedy maximal marginal relevance over candidate indices.
///
/// The first pick maximizes `relevance`; each later pick maximizes
/// `lambda * relevance[u] - (1 - lambda) * max_{j chosen} similarity(u, j)`.
pub fn mmr_order(
    ids: &[&str],
    relevance: &[f64],
    similarity: impl Fn(usize, usize) -> f64,
    k: usize,
    lambda: f64,
) -> Result<Vec<usize>, SelectError> {
    check_lambda(lambda)?;
    if k == 0 {
        return Err(SelectError::InvalidK);
    }
    let n = ids.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k.min(n));
    let mut remaining: Vec<usize> = (0..n).collect();
    // running max similarity to the chosen set
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    while chosen.len() < k && !remaining.is_empty() {
        let objective = |u: usize| {
            if chosen.is_empty() {
                relevance[u]
            } else {
                lambda * relevance[u] - (1.0 - lambda) * redundancy[u]
            }
        };
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                objective(a)
                    .total_cmp(&objective(b))
                    .then_with(|| ids[b].cmp(ids[a]))
            })
            .expect("remaining is non-empty");
        let pick = remaining.remove(pos);
        for &u in &remaining {
            redundancy[u] = redundancy[u].max(similarity(u, pick));
        }
        chosen.push(pick);
    }
    Ok(chosen)
}

fn derive_seed(seed: u64, test_id: &str) -> u64 {
    let digest = crate::sha256_hex(format!("{seed}\u{1f}{test_id}"));
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Uniform draw without replacement. Static draws depend only on `seed`;
/// dynamic draws on `(seed, test_id)`.
pub fn select_random(
    pool: &[Exemplar],
    k: usize,
    seed: u64,
    dynamic: bool,
    test_id: Option<&str>,
) -> Result<SelectionResult, SelectError> {
    check_pool(pool, k)?;
    let (method, effective_seed) = if dynamic {
        let id = test_id.ok_or(SelectError::MissingTestId)?;
        (SelectionMethod::RandomDynamic, derive_seed(seed, id))
    } else {
        (SelectionMethod::RandomStatic, seed)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(effective_seed);
    let take = k.min(pool.len());
    let picks = rand::seq::index::sample(&mut rng, pool.len(), take);
    let mut result = SelectionResult::new(method, k);
    result.chosen = picks.into_iter().map(|i| pool[i].id.clone()).collect();
    result.seed = Some(seed);
    result.test_id = test_id.map(str::to_owned);
    Ok(result)
}

/// A curated exemplar list with its coverage requirements.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticManifest {
    #[serde(default)]
    pub name: String,
    pub ids: Vec<String>,
    #[serde(default)]
    pub per_source_quota: BTreeMap<String, usize>,
    #[serde(default)]
    pub required_coverage: BTreeSet<Category>,
    /// Curator-assigned tags, merged with the exemplars' own categories
    /// for the coverage check.
    #[serde(default)]
    pub tags: BTreeMap<String, BTreeSet<Category>>,
}

impl StaticManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SelectError> {
        let path = path.as_ref();
        let err = |message: String| SelectError::Manifest {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Resolve and validate a curated manifest against the pool.
pub fn select_static(manifest: &StaticManifest, pool: &[Exemplar]) -> Result<SelectionResult, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    if manifest.ids.is_empty() {
        return Err(SelectError::InvalidK);
    }
    let by_id: HashMap<&str, &Exemplar> = pool.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut seen = BTreeSet::new();
    let mut chosen = Vec::with_capacity(manifest.ids.len());
    for id in &manifest.ids {
        let e = by_id
            .get(id.as_str())
            .ok_or_else(|| SelectError::UnknownExemplarId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(SelectError::DuplicateId(id.clone()));
        }
        chosen.push(*e);
    }

    if !manifest.per_source_quota.is_empty() {
        let total: usize = manifest.per_source_quota.values().sum();
        if total != manifest.ids.len() {
            return Err(SelectError::QuotaMismatch(format!(
                "quotas sum to {total} but the manifest lists {} ids",
                manifest.ids.len()
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &chosen {
            *counts.entry(e.source_dataset.as_str()).or_default() += 1;
        }
        for (source, &quota) in &manifest.per_source_quota {
            let got = counts.get(source.as_str()).copied().unwrap_or(0);
            if got != quota {
                return Err(SelectError::QuotaMismatch(format!(
                    "source '{source}' has {got} exemplars, quota is {quota}"
                )));
            }
        }
        if let Some(extra) = counts.keys().find(|s| !manifest.per_source_quota.contains_key(**s)) {
            return Err(SelectError::QuotaMismatch(format!("source '{extra}' has no quota")));
        }
    }

    let mut covered: BTreeSet<Category> = BTreeSet::new();
    for e in &chosen {
        covered.extend(e.categories.iter().copied());
        if let Some(extra) = manifest.tags.get(&e.id) {
            covered.extend(extra.iter().copied());
        }
    }
    let missing: Vec<Category> = manifest.required_coverage.difference(&covered).copied().collect();
    if !missing.is_empty() {
        return Err(SelectError::CoverageUnsatisfied { missing });
    }

    let mut result = SelectionResult::new(SelectionMethod::Static, manifest.ids.len());
    result.chosen = manifest.ids.clone();
    if !manifest.per_source_quota.is_empty() {
        result.per_source_quota = Some(manifest.per_source_quota.clone());
    }
    Ok(result)
}

fn unigram_counts(corpus: &[String], scheme: TokenScheme) -> (BTreeMap<String, f64>, f64) {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for doc in corpus {
        // documents that tokenize to nothing contribute nothing
        if let Ok(tokens) = crate::embed::tokenize(doc, scheme) {
            for t in tokens {
                *counts.entry(t).or_default() += 1.0;
                total += 1.0;
            }
        }
    }
    (counts, total)
}

/// Base-2 Jensen-Shannon divergence between the unigram distributions of two
/// corpora; lies in `[0, 1]`.
pub fn js_divergence(corpus_a: &[String], corpus_b: &[String], scheme: TokenScheme) -> Result<f64, SelectError> {
    let (ca, na) = unigram_counts(corpus_a, scheme);
    let (cb, nb) = unigram_counts(corpus_b, scheme);
    if na == 0.0 || nb == 0.0 {
        return Err(SelectError::EmptyCorpus);
    }
    let vocab: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    let mut js = 0.0;
    for term in vocab {
        let p = ca.get(term).copied().unwrap_or(0.0) / na;
        let q = cb.get(term).copied().unwrap_or(0.0) / nb;
        let m = 0.5 * (p + q);
        if p > 0.0 {
            js += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            js += 0.5 * q * (q / m).log2();
        }
    }
    Ok(js.clamp(0.0, 1.0))
}

/// Everything needed to run one selection method over a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ridge")]
    pub ridge_scale: f64,
    #[serde(default)]
    pub mean_norm_mode: MeanNormMode,
    /// Per-source quotas for multi-source pools. When set, each source is
    /// ranked separately and contributes its quota; `k` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_source_quota: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_manifest: Option<StaticManifest>,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_lambda() -> f64 {
    DEFAULT_MMR_LAMBDA
}
fn default_ridge() -> f64 {
    gauss::DEFAULT_RIDGE_SCALE
}

impl SelectionConfig {
    pub fn new(method: SelectionMethod) -> Self {
        Self {
            method,
            k: DEFAULT_K,
            lambda: DEFAULT_MMR_LAMBDA,
            seed: 0,
            ridge_scale: gauss::DEFAULT_RIDGE_SCALE,
            mean_norm_mode: MeanNormMode::default(),
            per_source_quota: None,
            static_manifest: None,
        }
    }
}

enum GroupIndex {
    None,
    Ftd(FtdIndex),
    Sentence(SentenceIndex),
}

struct Group {
    source: Option<String>,
    k: usize,
    members: Vec<Exemplar>,
    index: GroupIndex,
}

/// A selection method bound to a pool, with candidate embeddings
/// precomputed so that each test question costs one embedding call.
pub struct Selector {
    config: SelectionConfig,
    provider: Option<Arc<EmbeddingProvider>>,
    groups: Vec<Group>,
    fixed: Option<SelectionResult>,
}

impl Selector {
    pub fn new(
        config: SelectionConfig,
        pool: Vec<Exemplar>,
        provider: Option<Arc<EmbeddingProvider>>,
    ) -> Result<Self, SelectError> {
        if pool.is_empty() {
            return Err(SelectError::EmptyPool);
        }
        if config.k == 0 {
            return Err(SelectError::InvalidK);
        }
        check_lambda(config.lambda)?;
        let provider = match (config.method.needs_embeddings(), provider) {
            (true, None) => {
                return Err(SelectError::Embed(EmbedError::Backend(
                    "selection method needs an embedding provider".into(),
                )))
            }
            (_, p) => p,
        };

        let fixed = match config.method {
            SelectionMethod::Static => {
                let manifest = config.static_manifest.as_ref().ok_or(SelectError::MissingManifest)?;
                Some(select_static(manifest, &pool)?)
            }
            SelectionMethod::RandomStatic if config.per_source_quota.is_none() => {
                Some(select_random(&pool, config.k, config.seed, false, None)?)
            }
            _ => None,
        };

        let mut partitions: Vec<(Option<String>, usize, Vec<Exemplar>)> = match &config.per_source_quota {
            Some(quota) if config.method != SelectionMethod::Static => {
                let mut parts = Vec::new();
                for (source, &k) in quota {
                    let members: Vec<Exemplar> =
                        pool.iter().filter(|e| &e.source_dataset == source).cloned().collect();
                    if members.is_empty() {
                        return Err(SelectError::QuotaMismatch(format!("no exemplars from source '{source}'")));
                    }
                    if k == 0 {
                        return Err(SelectError::QuotaMismatch(format!("zero quota for source '{source}'")));
                    }
                    parts.push((Some(source.clone()), k, members));
                }
                parts
            }
            _ => vec![(None, config.k, pool)],
        };

        let mut groups = Vec::with_capacity(partitions.len());
        for (source, k, members) in partitions.drain(..) {
            let index = match (config.method, provider.as_deref()) {
                (SelectionMethod::Ftd, Some(p)) => {
                    GroupIndex::Ftd(FtdIndex::build(&members, p, config.ridge_scale, config.mean_norm_mode)?)
                }
                (SelectionMethod::Knn | SelectionMethod::Mmr, Some(p)) => {
                    GroupIndex::Sentence(SentenceIndex::build(&members, p)?)
                }
                _ => GroupIndex::None,
            };
            groups.push(Group {
                source,
                k,
                members,
                index,
            });
        }
        Ok(Self {
            config,
            provider,
            groups,
            fixed,
        })
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.config
    }

    fn select_group(&self, group: &Group, test_id: &str, question: &str) -> Result<SelectionResult, SelectError> {
        let provider = self.provider.as_deref();
        match (&group.index, self.config.method) {
            (GroupIndex::Ftd(index), _) => index.select(question, group.k, provider.expect("checked")),
            (GroupIndex::Sentence(index), SelectionMethod::Knn) => {
                Ok(index.knn(&provider.expect("checked").embed_sentence(question)?, group.k))
            }
            (GroupIndex::Sentence(index), _) => {
                index.mmr(&provider.expect("checked").embed_sentence(question)?, group.k, self.config.lambda)
            }
            (GroupIndex::None, SelectionMethod::RandomDynamic) => {
                select_random(&group.members, group.k, self.config.seed, true, Some(test_id))
            }
            (GroupIndex::None, _) => select_random(&group.members, group.k, self.config.seed, false, None),
        }
    }

    /// Select exemplars for one test item.
    pub fn select(&self, test_id: &str, question: &str) -> Result<SelectionResult, SelectError> {
        let mut result = match &self.fixed {
            Some(fixed) => fixed.clone(),
            None if self.groups.len() == 1 && self.groups[0].source.is_none() => {
                self.select_group(&self.groups[0], test_id, question)?
            }
            None => {
                let mut merged = SelectionResult::new(self.config.method, 0);
                let mut quota = BTreeMap::new();
                for group in &self.groups {
                    let part = self.select_group(group, test_id, question)?;
                    merged.k += group.k;
                    merged.chosen.extend(part.chosen);
                    merged.scores.extend(part.scores);
                    merged.lambda = part.lambda;
                    merged.seed = part.seed;
                    quota.insert(group.source.clone().expect("quota group"), group.k);
                }
                let descending = match self.config.method {
                    SelectionMethod::Ftd => Some(false),
                    SelectionMethod::Knn => Some(true),
                    _ => None,
                };
                if let Some(desc) = descending {
                    let scores = &merged.scores;
                    merged.chosen.sort_by(|a, b| {
                        let (sa, sb) = (scores[a], scores[b]);
                        let c = if desc { sb.total_cmp(&sa) } else { sa.total_cmp(&sb) };
                        c.then_with(|| a.cmp(b))
                    });
                }
                merged.per_source_quota = Some(quota);
                merged
            }
        };
        result.test_id = Some(test_id.to_owned());
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AbilityPayload;
    use proptest::prelude::*;

    fn ex(id: &str, question: &str, source: &str, cats: &[Category]) -> Exemplar {
        Exemplar {
            id: id.into(),
            question: question.into(),
            answer: "a".into(),
            payload: AbilityPayload::Rationale("r".into()),
            categories: cats.iter().copied().collect(),
            source_dataset: source.into(),
            context: None,
        }
    }

    fn pool() -> Vec<Exemplar> {
        vec![
            ex("e1", "Who voices Jarvis in Iron Man?", "subqa", &[Category::Compositional]),
            ex("e2", "What is the mouth of the Naches River?", "subqa", &[Category::Compositional]),
            ex("e3", "How many students were in fourth grade at the end?", "subqa", &[]),
            ex("e4", "Is Mount Everest taller than K2?", "strategyqa", &[Category::Comparison]),
            ex("e5", "Who is the spouse of Paul Bettany?", "strategyqa", &[Category::Inference]),
        ]
    }

    #[test]
    fn ftd_identical_question_first() {
        let p = EmbeddingProvider::local(7, 32);
        let r = select_ftd("Who is the spouse of Paul Bettany?", &pool(), 3, &p, 1e-6).unwrap();
        assert_eq!(r.chosen[0], "e5");
        assert!(r.scores["e5"].abs() < 1e-9);
        assert_eq!(r.chosen.len(), 3);
        let s: Vec<f64> = r.chosen.iter().map(|id| r.scores[id]).collect();
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn k_clipped_to_pool() {
        let p = EmbeddingProvider::local(7, 16);
        let small = &pool()[..3];
        assert_eq!(select_ftd("q one", small, 10, &p, 1e-6).unwrap().chosen.len(), 3);
        assert_eq!(select_knn("q one", small, 10, &p).unwrap().chosen.len(), 3);
        assert_eq!(select_mmr("q one", small, 10, 0.7, &p).unwrap().chosen.len(), 3);
    }

    #[test]
    fn empty_pool_errors() {
        let p = EmbeddingProvider::local(7, 16);
        assert!(matches!(select_knn("q", &[], 3, &p), Err(SelectError::EmptyPool)));
        assert!(matches!(select_ftd("q", &[], 3, &p, 1e-6), Err(SelectError::EmptyPool)));
        assert!(matches!(select_mmr("q", &[], 3, 0.7, &p), Err(SelectError::EmptyPool)));
        assert!(matches!(select_random(&[], 3, 1, false, None), Err(SelectError::EmptyPool)));
    }

    #[test]
    fn knn_identical_has_unit_similarity() {
        let p = EmbeddingProvider::local(7, 32);
        let r = select_knn("What is the mouth of the Naches River?", &pool(), 2, &p).unwrap();
        assert_eq!(r.chosen[0], "e2");
        assert!((r.scores["e2"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mmr_lambda_one_is_knn() {
        let p = EmbeddingProvider::local(3, 32);
        let q = "Who voices the spouse of Jarvis?";
        let knn = select_knn(q, &pool(), 4, &p).unwrap();
        let mmr = select_mmr(q, &pool(), 4, 1.0, &p).unwrap();
        assert_eq!(knn.chosen, mmr.chosen);
    }

    #[test]
    fn mmr_pure_diversity_skips_duplicate() {
        // b and c are near-duplicates and both most relevant; d is far away
        let ids = ["a", "b", "c", "d"];
        let rel = [0.1, 0.9, 0.89, 0.2];
        let sim = [
            [1.0, 0.3, 0.3, 0.5],
            [0.3, 1.0, 0.99, 0.0],
            [0.3, 0.99, 1.0, 0.05],
            [0.5, 0.0, 0.05, 1.0],
        ];
        let order = mmr_order(&ids, &rel, |i, j| sim[i][j], 2, 0.0).unwrap();
        assert_eq!(order, vec![1, 3]);
    }

    #[test]
    fn mmr_rejects_bad_lambda() {
        assert!(matches!(
            mmr_order(&["a"], &[1.0], |_, _| 0.0, 1, 1.5),
            Err(SelectError::InvalidLambda(_))
        ));
    }

    #[test]
    fn random_static_and_dynamic() {
        let pool = pool();
        let a = select_random(&pool, 3, 9, false, None).unwrap();
        let b = select_random(&pool, 3, 9, false, Some("other")).unwrap();
        assert_eq!(a.chosen, b.chosen);
        let d1 = select_random(&pool, 3, 9, true, Some("t1")).unwrap();
        assert_eq!(d1.chosen, select_random(&pool, 3, 9, true, Some("t1")).unwrap().chosen);
        assert_eq!(d1.method, SelectionMethod::RandomDynamic);
        assert!(matches!(select_random(&pool, 3, 9, true, None), Err(SelectError::MissingTestId)));

        let all = select_random(&pool, 5, 1, false, None).unwrap();
        let mut ids = all.chosen.clone();
        ids.sort();
        assert_eq!(ids, vec!["e1", "e2", "e3", "e4", "e5"]);
    }

    #[test]
    fn static_manifest_checks() {
        let pool = pool();
        let mut m = StaticManifest {
            name: "wqa".into(),
            ids: vec!["e1".into(), "e2".into(), "e4".into()],
            per_source_quota: BTreeMap::from([("subqa".into(), 2), ("strategyqa".into(), 1)]),
            required_coverage: BTreeSet::from([Category::Compositional, Category::Comparison]),
            tags: BTreeMap::new(),
        };
        let r = select_static(&m, &pool).unwrap();
        assert_eq!(r.chosen, vec!["e1", "e2", "e4"]);
        assert_eq!(r.per_source_quota.as_ref().unwrap()["subqa"], 2);

        m.ids = vec!["e1".into(), "e2".into(), "e5".into()];
        match select_static(&m, &pool) {
            Err(SelectError::CoverageUnsatisfied { missing }) => assert_eq!(missing, vec![Category::Comparison]),
            other => panic!("{other:?}"),
        }
        m.tags.insert("e5".into(), BTreeSet::from([Category::Comparison]));
        assert!(select_static(&m, &pool).is_ok());

        m.ids = vec!["e1".into(), "nope".into(), "e4".into()];
        assert!(matches!(select_static(&m, &pool), Err(SelectError::UnknownExemplarId(id)) if id == "nope"));

        m.ids = vec!["e1".into(), "e3".into(), "e2".into()];
        assert!(matches!(select_static(&m, &pool), Err(SelectError::QuotaMismatch(_))));
    }

    #[test]
    fn js_known_values() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let a = s(&["a a b c"]);
        assert_eq!(js_divergence(&a, &a, TokenScheme::Simple).unwrap(), 0.0);
        let disjoint = js_divergence(&s(&["x y"]), &s(&["z w"]), TokenScheme::Simple).unwrap();
        assert!((disjoint - 1.0).abs() < 1e-15);
        assert!(matches!(
            js_divergence(&s(&["?"]), &a, TokenScheme::Simple),
            Err(SelectError::EmptyCorpus)
        ));
    }

    #[test]
    fn selector_quota_merges_sources() {
        let provider = Arc::new(EmbeddingProvider::local(7, 16));
        let mut config = SelectionConfig::new(SelectionMethod::Ftd);
        config.per_source_quota = Some(BTreeMap::from([("subqa".into(), 2), ("strategyqa".into(), 1)]));
        let sel = Selector::new(config, pool(), Some(provider)).unwrap();
        let r = sel.select("t1", "Who was born later, Gideon or Holm?").unwrap();
        assert_eq!(r.chosen.len(), 3);
        let from_strategy = r.chosen.iter().filter(|id| *id == "e4" || *id == "e5").count();
        assert_eq!(from_strategy, 1);
        let s: Vec<f64> = r.chosen.iter().map(|id| r.scores[id]).collect();
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.test_id.as_deref(), Some("t1"));
    }

    #[test]
    fn selector_static_ignores_question() {
        let mut config = SelectionConfig::new(SelectionMethod::Static);
        config.static_manifest = Some(StaticManifest {
            ids: vec!["e2".into(), "e1".into()],
            ..StaticManifest::default()
        });
        let sel = Selector::new(config, pool(), None).unwrap();
        assert_eq!(sel.select("a", "x").unwrap().chosen, sel.select("b", "y").unwrap().chosen);
    }

    proptest! {
        #[test]
        fn js_symmetric_and_bounded(a in prop::collection::vec("[a-e ]{1,12}", 1..4),
                                    b in prop::collection::vec("[a-e ]{1,12}", 1..4)) {
            let ab = js_divergence(&a, &b, TokenScheme::Simple);
            let ba = js_divergence(&b, &a, TokenScheme::Simple);
            match (ab, ba) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                (Err(_), Err(_)) => {}
                (Err(_), Ok(_)) | (Ok(_), Err(_)) => {}
            }
        }

        #[test]
        fn selections_are_distinct_subsets(seed in 0u64..500, k in 1usize..8, dynamic in any::<bool>()) {
            let pool = pool();
            let r = select_random(&pool, k, seed, dynamic, Some("t")).unwrap();
            let ids: BTreeSet<&String> = r.chosen.iter().collect();
            prop_assert_eq!(ids.len(), r.chosen.len());
            prop_assert_eq!(r.chosen.len(), k.min(pool.len()));
            prop_assert!(r.chosen.iter().all(|id| pool.iter().any(|e| &e.id == id)));
        }
    }
}
