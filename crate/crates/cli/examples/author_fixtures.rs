//! Turn hand-written responses into replay fixtures.
//!
//! ```text
//! cargo run -p icat-cli --example author_fixtures -- MANIFEST RESPONSES OUT
//! ```
//!
//! RESPONSES is JSON lines of `{"test_id": .., "raw_text": ..}`. The prompts
//! are rendered exactly as `icat run` would render them, so the fixtures are
//! keyed by the same prompt hashes. Re-run after any template or selection
//! change.

use std::collections::HashMap;
use std::path::PathBuf;

use icat_cli::commands::load_manifest;
use icat_cli::pipeline;
use icat_cli::Overrides;
use icat_core::llm::{write_fixtures, FixtureEntry};
use serde::Deserialize;

#[derive(Deserialize)]
struct Authored {
    test_id: String,
    raw_text: String,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let [manifest, responses, out] = args.as_slice() else {
        return Err("usage: author_fixtures MANIFEST RESPONSES OUT".into());
    };
    let m = load_manifest(manifest, &Overrides::default())?;
    let targets = pipeline::load_targets(&m)?;
    let pool = pipeline::load_pool(&m)?;
    let selections = pipeline::select_all(&m, &pool, &targets)?;
    let prompts = pipeline::render_all(&m, &pool, &targets, &selections)?;

    let authored: HashMap<String, String> = pipeline::read_jsonl::<Authored>(responses)?
        .into_iter()
        .map(|a| (a.test_id, a.raw_text))
        .collect();
    let mut entries = Vec::new();
    for p in &prompts {
        let Some(raw) = authored.get(&p.test_id) else {
            eprintln!("no response for {}; left out", p.test_id);
            continue;
        };
        entries.push(FixtureEntry {
            prompt_hash: p.content_hash.clone(),
            params: m.generation.clone(),
            raw_text: raw.clone(),
        });
    }
    write_fixtures(out, &entries)?;
    println!("{} fixtures written to {}", entries.len(), out.display());
    Ok(())
}
