//! Subcommand implementations. Each one writes its artifacts into a fresh
//! timestamped directory (or, for `eval`, into the run it scores) next to a
//! copy of the manifest that produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use icat_core::data::{load_dataset, relatedness_csv, relatedness_report, relatedness_table, DatasetFormat, RelatednessRow};
use icat_core::embed::TokenScheme;
use icat_core::eval::{confusion, mcnemar, significance_mark, Metric, ResultsTable, RunOutcome};
use icat_core::llm::{write_fixtures, FixtureEntry};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ExitKind};
use crate::manifest::{Overrides, RunManifest};
use crate::pipeline::{self, read_jsonl, write_file, write_jsonl, ItemResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// `<out>/<UTC timestamp>-<command>-<name>`, suffixed if it already exists.
pub fn create_run_dir(out: &Path, command: &str, name: &str) -> Result<PathBuf, CliError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{stamp}-{command}-{name}");
    let mut dir = out.join(&base);
    let mut n = 2;
    while dir.exists() {
        dir = out.join(format!("{base}-{n}"));
        n += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn load_manifest(path: &Path, overrides: &Overrides) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::load(path)?;
    m.apply(overrides);
    m.data_root = Some(pipeline::absolute(m.data_root()));
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub path: PathBuf,
    pub format: DatasetFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzePair {
    pub transfer: DatasetRef,
    pub target: DatasetRef,
}

/// Input of `analyze`, stored as that run's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeManifest {
    #[serde(default)]
    pub scheme: TokenScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    pub pairs: Vec<AnalyzePair>,
}

impl AnalyzeManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        let mut m: Self = toml::from_str(&text).map_err(|e| CliError::config(format!("invalid pairs file: {e}")))?;
        if m.data_root.is_none() {
            m.data_root = path.parent().map(Path::to_path_buf);
        }
        Ok(m)
    }
}

pub fn cmd_analyze(manifest: &AnalyzeManifest, out: &Path) -> Result<(PathBuf, Vec<RelatednessRow>), CliError> {
    if manifest.pairs.is_empty() {
        return Err(CliError::config("analyze needs at least one transfer/target pair"));
    }
    let root = manifest.data_root.clone().unwrap_or_default();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    let mut loaded = Vec::new();
    for pair in &manifest.pairs {
        let s = load_dataset(resolve(&pair.transfer.path), pair.transfer.format)?;
        let t = load_dataset(resolve(&pair.target.path), pair.target.format)?;
        loaded.push((pair.transfer.name.as_str(), s, pair.target.name.as_str(), t));
    }
    let refs: Vec<_> = loaded.iter().map(|(a, s, b, t)| (*a, s, *b, t)).collect();
    let rows = relatedness_report(&refs, manifest.scheme)?;

    let dir = create_run_dir(out, "analyze", "relatedness")?;
    let mut frozen = manifest.clone();
    frozen.data_root = Some(pipeline::absolute(&root));
    write_file(&dir.join(MANIFEST_FILE), toml::to_string(&frozen).expect("manifest serializes"))?;
    write_file(&dir.join("relatedness.csv"), relatedness_csv(&rows))?;
    write_file(&dir.join("relatedness.txt"), relatedness_table(&rows))?;
    Ok((dir, rows))
}

pub fn cmd_select(manifest: &RunManifest, out: &Path) -> Result<PathBuf, CliError> {
    let targets = pipeline::load_targets(manifest)?;
    let pool = pipeline::load_pool(manifest)?;
    let selections = pipeline::select_all(manifest, &pool, &targets)?;
    let dir = create_run_dir(out, "select", &manifest.name)?;
    write_file(&dir.join(MANIFEST_FILE), manifest.to_toml())?;
    write_jsonl(&dir.join("selections.jsonl"), &selections)?;
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub total: usize,
    pub succeeded: usize,
    /// Worst per-item failure, if any item failed.
    pub failure: Option<ExitKind>,
}

fn severity(kind: ExitKind) -> u8 {
    match kind {
        ExitKind::Config => 1,
        ExitKind::Backend => 2,
        ExitKind::FixtureMiss => 3,
    }
}

/// Run the pipeline. Artifacts are written even when some items failed;
/// the summary reports the failure class for the exit code.
pub fn cmd_run(manifest: &RunManifest, out: &Path, record_fixtures: Option<&Path>) -> Result<RunSummary, CliError> {
    let artifacts = pipeline::run(manifest)?;
    let dir = create_run_dir(out, "run", &manifest.name)?;
    write_file(&dir.join(MANIFEST_FILE), manifest.to_toml())?;
    write_jsonl(&dir.join("selections.jsonl"), &artifacts.selections)?;
    write_jsonl(&dir.join("prompts.jsonl"), &artifacts.prompts)?;
    write_jsonl(&dir.join("completions.jsonl"), &artifacts.completions)?;
    write_jsonl(&dir.join("items.jsonl"), &artifacts.items)?;

    if let Some(path) = record_fixtures {
        let entries: Vec<FixtureEntry> = artifacts
            .completions
            .iter()
            .filter_map(|c| {
                Some(FixtureEntry {
                    prompt_hash: c.prompt_hash.clone(),
                    params: c.params.clone(),
                    raw_text: c.raw_text.clone()?,
                })
            })
            .collect();
        write_fixtures(path, &entries).map_err(|e| CliError::config(format!("writing {}: {e}", path.display())))?;
    }

    let failure = artifacts
        .completions
        .iter()
        .filter_map(|c| c.error.as_ref())
        .map(|e| ExitKind::from_failure(e.kind))
        .max_by_key(|k| severity(*k));
    Ok(RunSummary {
        dir,
        total: artifacts.completions.len(),
        succeeded: artifacts.completions.iter().filter(|c| c.succeeded()).count(),
        failure,
    })
}

fn outcomes_for(run_dir: &Path, metric: Option<Metric>) -> Result<Vec<RunOutcome>, CliError> {
    let items: Vec<ItemResult> = read_jsonl(&run_dir.join("items.jsonl"))?;
    Ok(pipeline::evaluate(&items, metric))
}

/// Score a run directory from its stored items; no backend is involved.
pub fn cmd_eval(run_dir: &Path, metric: Option<Metric>, baseline: Option<&str>) -> Result<ResultsTable, CliError> {
    if !run_dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::config(format!("{} is not a run directory", run_dir.display())));
    }
    let outcomes = outcomes_for(run_dir, metric)?;
    let table = ResultsTable::build(&outcomes, baseline);
    write_jsonl(&run_dir.join("outcomes.jsonl"), &outcomes)?;
    write_file(&run_dir.join("results.csv"), table.csv())?;
    write_file(&run_dir.join("results.json"), table.json())?;
    write_file(&run_dir.join("results.txt"), table.pretty())?;
    Ok(table)
}

pub struct Report {
    pub dir: PathBuf,
    pub table: ResultsTable,
    pub confusion_text: String,
}

/// Combine scored runs into one methods × datasets table with confusion
/// matrices and McNemar tests against `baseline`.
pub fn cmd_report(run_dirs: &[PathBuf], baseline: Option<&str>, out: &Path) -> Result<Report, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::config("report needs at least one run directory"));
    }
    let mut outcomes = Vec::new();
    let mut manifests = Vec::new();
    for d in run_dirs {
        let manifest = std::fs::read_to_string(d.join(MANIFEST_FILE))
            .map_err(|e| CliError::config(format!("{} is not a run directory: {e}", d.display())))?;
        let scored = d.join("outcomes.jsonl");
        let mut o: Vec<RunOutcome> = if scored.exists() {
            read_jsonl(&scored)?
        } else {
            outcomes_for(d, None)?
        };
        manifests.push(manifest);
        outcomes.append(&mut o);
    }
    let table = ResultsTable::build(&outcomes, baseline);

    let dir = create_run_dir(out, "report", baseline.unwrap_or("all"))?;
    let mdir = dir.join("manifests");
    std::fs::create_dir_all(&mdir).map_err(|e| CliError::config(e.to_string()))?;
    for (i, (m, d)) in manifests.iter().zip(run_dirs).enumerate() {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        write_file(&mdir.join(format!("{i:02}-{name}.toml")), m)?;
    }
    write_file(
        &dir.join(MANIFEST_FILE),
        toml::to_string(&ReportManifest {
            baseline: baseline.map(str::to_owned),
            runs: run_dirs.iter().map(|d| pipeline::absolute(d)).collect(),
        })
        .expect("report manifest serializes"),
    )?;
    write_file(&dir.join("report.csv"), table.csv())?;
    write_file(&dir.join("report.json"), table.json())?;
    write_file(&dir.join("report.txt"), table.pretty())?;

    let mut confusion_text = String::new();
    if let Some(base) = baseline {
        let mut grouped: BTreeMap<(&str, &str), Vec<RunOutcome>> = BTreeMap::new();
        for o in &outcomes {
            grouped.entry((o.method.as_str(), o.dataset.as_str())).or_default().push(o.clone());
        }
        let mut csv = String::from("dataset,method,baseline,both_correct,method_only,baseline_only,both_wrong,p_value,mark\n");
        for ((method, dataset), mine) in &grouped {
            if *method == base {
                continue;
            }
            let Some(theirs) = grouped.get(&(base, *dataset)) else { continue };
            let Ok(c) = confusion(mine, theirs) else { continue };
            let p = mcnemar(&c);
            let mark = if c.a_only > c.b_only { significance_mark(p) } else { "" };
            let _ = writeln!(confusion_text, "{dataset}: {method} vs {base} (McNemar p = {p:.4}{mark})");
            confusion_text.push_str(&c.table(method, base));
            confusion_text.push('\n');
            let _ = writeln!(
                csv,
                "{dataset},{method},{base},{},{},{},{},{p:.6},{mark}",
                c.both, c.a_only, c.b_only, c.neither
            );
        }
        write_file(&dir.join("confusion.csv"), csv)?;
        write_file(&dir.join("confusion.txt"), &confusion_text)?;
    }
    Ok(Report {
        dir,
        table,
        confusion_text,
    })
}

#[derive(Serialize)]
struct ReportManifest {
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
    runs: Vec<PathBuf>,
}
