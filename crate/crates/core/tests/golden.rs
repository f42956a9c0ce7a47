//! Golden prompt snapshots under fixtures/golden.
//!
//! Set UPDATE_GOLDEN=1 to rewrite the snapshots after an intended change.

use std::path::{Path, PathBuf};

use icat_core::data::{load_dataset, DatasetFormat};
use icat_core::prompt::{render_prompt, PromptMode, TemplateSet};
use serde::Deserialize;

#[derive(Deserialize)]
struct Cases {
    case: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    mode: PromptMode,
    pool: PathBuf,
    exemplars: Vec<String>,
    targets: PathBuf,
    target: String,
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

#[test]
fn prompts_match_snapshots() {
    let dir = golden_dir();
    let cases: Cases = toml::from_str(&std::fs::read_to_string(dir.join("cases.toml")).unwrap()).unwrap();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let templates = TemplateSet::builtin();
    let mut failures = Vec::new();
    for case in &cases.case {
        let pool = load_dataset(dir.join(&case.pool), DatasetFormat::Unified)
            .unwrap()
            .into_exemplars()
            .unwrap();
        let targets = load_dataset(dir.join(&case.targets), DatasetFormat::Unified)
            .unwrap()
            .into_targets()
            .unwrap();
        let chosen: Vec<_> = case
            .exemplars
            .iter()
            .map(|id| pool.iter().find(|e| &e.id == id).expect("exemplar in pool"))
            .collect();
        let target = targets.iter().find(|t| t.id == case.target).expect("target");
        let record = render_prompt(case.mode, &chosen, target, &templates).unwrap();
        assert_eq!(record.content_hash, icat_core::sha256_hex(&record.rendered));
        assert_eq!(record.rendered.matches(&target.question).count(), 1, "{}", case.name);

        let path = dir.join(format!("{}.txt", case.name));
        if update {
            std::fs::write(&path, &record.rendered).unwrap();
            continue;
        }
        let stored = std::fs::read_to_string(&path).unwrap_or_default();
        if icat_core::sha256_hex(&stored) != record.content_hash {
            failures.push(case.name.clone());
        }
    }
    assert!(failures.is_empty(), "prompts drifted from snapshots: {failures:?}");
}
