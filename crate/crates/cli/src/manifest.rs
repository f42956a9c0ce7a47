//! Run manifests.
//!
//! A manifest fixes everything a run depends on. Command-line overrides are
//! applied before the run starts and the effective manifest is what gets
//! copied into the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icat_core::data::DatasetFormat;
use icat_core::embed::TokenScheme;
use icat_core::eval::Metric;
use icat_core::gauss::{MeanNormMode, DEFAULT_RIDGE_SCALE};
use icat_core::llm::GenerationParams;
use icat_core::prompt::{Numbering, PromptMode};
use icat_core::select::{SelectionMethod, DEFAULT_K, DEFAULT_MMR_LAMBDA};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Keep a seeded, order-preserving sample of this many items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    #[serde(default)]
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_source_quota: Option<BTreeMap<String, usize>>,
    /// Curated exemplar manifest for `method = "static"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_manifest: Option<PathBuf>,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_lambda() -> f64 {
    DEFAULT_MMR_LAMBDA
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub mode: PromptMode,
    /// `v1` selects the built-in templates.
    #[serde(default = "default_template_version")]
    pub template_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numbering: Option<Numbering>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<usize>,
}

fn default_template_version() -> String {
    "v1".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendChoice,
    /// Replay fixtures (JSON lines).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Chat-completions URL for the remote backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub max_remote_calls: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    #[serde(default = "default_embedder")]
    pub kind: EmbedderChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub scheme: TokenScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_embedder() -> EmbedderChoice {
    EmbedderChoice::Local
}
fn default_dim() -> usize {
    icat_core::embed::LocalEmbedder::REALISTIC_DIM
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderChoice::Local,
            seed: 0,
            dim: default_dim(),
            scheme: TokenScheme::default(),
            endpoint: None,
            model: None,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub name: String,
    /// Method name used in result tables; derived from mode and method when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Base directory for every relative path below. Defaults to the
    /// manifest's own directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub target: DatasetSpec,
    #[serde(default)]
    pub transfer: Vec<DatasetSpec>,
    pub selection: SelectionSpec,
    pub prompt: PromptSpec,
    #[serde(default)]
    pub generation: GenerationParams,
    pub backend: BackendSpec,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub backend: Option<BackendChoice>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub max_remote_calls: Option<u64>,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid manifest: {e}")))
    }

    /// Read a manifest; a missing `data_root` becomes the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        let mut m = Self::parse(&text)?;
        if m.data_root.is_none() {
            m.data_root = Some(path.parent().map(Path::to_path_buf).unwrap_or_default());
        }
        Ok(m)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data_root {
            self.data_root = Some(d.clone());
        }
        if let Some(c) = &o.cache_dir {
            self.cache_dir = Some(c.clone());
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(s) = o.seed {
            self.selection.seed = s;
        }
        if let Some(p) = o.parallelism {
            self.backend.parallelism = p;
        }
        if let Some(n) = o.max_remote_calls {
            self.backend.max_remote_calls = n;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn data_root(&self) -> &Path {
        self.data_root.as_deref().unwrap_or(Path::new("."))
    }

    /// `path` joined onto the data root unless already absolute.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_root().join(path)
        }
    }

    /// Method name for result tables.
    pub fn method_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.prompt.mode {
            PromptMode::IcatQd | PromptMode::IcatRg => format!("icat_{}", self.selection.method),
            other => other.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "m"
[target]
path = "t.jsonl"
format = "unified"
[selection]
method = "ftd"
[prompt]
mode = "icat_rg"
[backend]
kind = "replay"
fixtures = "f.jsonl"
"#;

    #[test]
    fn defaults_and_round_trip() {
        let m = RunManifest::parse(MINIMAL).unwrap();
        assert_eq!(m.selection.k, 6);
        assert_eq!(m.selection.lambda, 0.7);
        assert_eq!(m.generation, GenerationParams::default());
        assert_eq!(m.backend.max_remote_calls, 0);
        assert_eq!(m.method_label(), "icat_ftd");
        assert_eq!(RunManifest::parse(&m.to_toml()).unwrap(), m);
    }

    #[test]
    fn overrides_are_frozen() {
        let mut m = RunManifest::parse(MINIMAL).unwrap();
        m.apply(&Overrides {
            backend: Some(BackendChoice::Remote),
            seed: Some(9),
            max_remote_calls: Some(3),
            ..Overrides::default()
        });
        let again = RunManifest::parse(&m.to_toml()).unwrap();
        assert_eq!(again.backend.kind, BackendChoice::Remote);
        assert_eq!(again.selection.seed, 9);
        assert_eq!(again.backend.max_remote_calls, 3);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunManifest::parse(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }
}
