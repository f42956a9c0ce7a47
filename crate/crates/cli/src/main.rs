use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icat_cli::commands::{self, AnalyzeManifest, AnalyzePair, DatasetRef};
use icat_cli::manifest::BackendChoice;
use icat_cli::{CliError, Overrides};
use icat_core::data::DatasetFormat;
use icat_core::embed::TokenScheme;
use icat_core::eval::Metric;

#[derive(Parser)]
#[command(name = "icat", version, about = "Exemplar selection, prompting and scoring for in-context ability transfer")]
struct Cli {
    /// Base directory for dataset, fixture and template paths.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Persistent cache for embeddings and remote completions.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendChoice>,
    /// Selection seed (random selection methods).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where run directories are created.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Cap on calls that reach a remote completion backend.
    #[arg(long, global = true)]
    max_remote_calls: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jensen-Shannon divergence between transfer and target question texts.
    Analyze {
        /// TOML file listing [[pairs]]; alternatively give one pair with the flags below.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "target")]
        transfer: Option<PathBuf>,
        #[arg(long, default_value = "unified")]
        transfer_format: String,
        #[arg(long, requires = "transfer")]
        target: Option<PathBuf>,
        #[arg(long, default_value = "unified")]
        target_format: String,
        #[arg(long, default_value = "simple")]
        scheme: String,
    },
    /// Exemplar selection for every target item.
    Select { manifest: PathBuf },
    /// Select, prompt, complete and parse.
    Run {
        manifest: PathBuf,
        /// Also write successful completions as replay fixtures.
        #[arg(long)]
        record_fixtures: Option<PathBuf>,
    },
    /// Score a run directory.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        metric: Option<String>,
    },
    /// Compare scored runs: accuracy grid, confusion matrices, significance.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "few_shot_cot")]
        baseline: String,
    },
}

fn dataset_ref(path: PathBuf, format: &str) -> Result<DatasetRef, CliError> {
    let format: DatasetFormat = format.parse().map_err(|e| CliError::config(format!("{e}")))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetRef { name, path, format })
}

fn scheme(s: &str) -> Result<TokenScheme, CliError> {
    match s {
        "simple" | "lower-strip-ws" => Ok(TokenScheme::Simple),
        "simple_no_stopwords" | "lower-strip-ws-nostop" => Ok(TokenScheme::SimpleNoStopwords),
        other => Err(CliError::config(format!("unknown token scheme '{other}'"))),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        data_root: cli.data_root.clone(),
        cache_dir: cli.cache_dir.clone(),
        backend: cli.backend,
        seed: cli.seed,
        parallelism: cli.parallelism,
        max_remote_calls: cli.max_remote_calls,
    };
    match cli.command {
        Command::Analyze {
            pairs,
            transfer,
            transfer_format,
            target,
            target_format,
            scheme: s,
        } => {
            let mut manifest = match (pairs, transfer, target) {
                (Some(p), _, _) => AnalyzeManifest::load(&p)?,
                (None, Some(s), Some(t)) => AnalyzeManifest {
                    scheme: TokenScheme::default(),
                    data_root: None,
                    pairs: vec![AnalyzePair {
                        transfer: dataset_ref(s, &transfer_format)?,
                        target: dataset_ref(t, &target_format)?,
                    }],
                },
                _ => return Err(CliError::config("give --pairs FILE or both --transfer and --target")),
            };
            manifest.scheme = scheme(&s)?;
            if let Some(root) = cli.data_root {
                manifest.data_root = Some(root);
            }
            let (dir, rows) = commands::cmd_analyze(&manifest, &cli.out)?;
            print!("{}", icat_core::data::relatedness_table(&rows));
            println!("{}", dir.display());
        }
        Command::Select { manifest } => {
            let m = commands::load_manifest(&manifest, &overrides)?;
            let dir = commands::cmd_select(&m, &cli.out)?;
            println!("{}", dir.display());
        }
        Command::Run {
            manifest,
            record_fixtures,
        } => {
            let m = commands::load_manifest(&manifest, &overrides)?;
            let summary = commands::cmd_run(&m, &cli.out, record_fixtures.as_deref())?;
            println!("{} of {} completions succeeded", summary.succeeded, summary.total);
            println!("{}", summary.dir.display());
            if let Some(kind) = summary.failure {
                return Err(CliError {
                    kind,
                    message: format!(
                        "{} item(s) failed; see {}",
                        summary.total - summary.succeeded,
                        summary.dir.join("completions.jsonl").display()
                    ),
                });
            }
        }
        Command::Eval { run_dir, metric } => {
            let metric = metric
                .map(|m| m.parse::<Metric>().map_err(CliError::config))
                .transpose()?;
            let table = commands::cmd_eval(&run_dir, metric, None)?;
            print!("{}", table.pretty());
        }
        Command::Report { run_dirs, baseline } => {
            let report = commands::cmd_report(&run_dirs, Some(&baseline), &cli.out)?;
            print!("{}", report.table.pretty());
            print!("{}", report.confusion_text);
            println!("{}", report.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
