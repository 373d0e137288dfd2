//! Subcommand implementations. Every command reads and writes through the
//! paths in [`RunConfig`]; per-subject failures are collected instead of
//! aborting the batch.

mod evaluate;
mod infer;
mod synth;
mod train;

pub use evaluate::{cmd_evaluate, GroupMetrics, Metrics};
pub use infer::{cmd_cam, cmd_complete, cmd_predict, cmd_report, resolve_regions, SubjectReport};
pub use synth::{cmd_synth, TruthRow};
pub use train::{cmd_train, stratified_split, CompleterFile, ModelFile, Split};

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::formats::write_json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectError {
    pub subject_id: String,
    pub error: String,
}

/// What a command did. A non-empty `failures` list means a partial run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub command: &'static str,
    pub processed: usize,
    pub failures: Vec<SubjectError>,
    pub manifest: Value,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Runs `f` for every subject in parallel. Results come back in input order.
pub(crate) fn per_subject<T, F>(ids: &[String], f: F) -> (Vec<(String, T)>, Vec<SubjectError>)
where
    T: Send,
    F: Fn(&str) -> Result<T> + Sync,
{
    let results: Vec<_> = ids.par_iter().map(|id| (id, f(id))).collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => done.push((id.clone(), v)),
            Err(e) => {
                log::warn!("{id}: {e:#}");
                failures.push(SubjectError {
                    subject_id: id.clone(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    (done, failures)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `<command>_errors.csv` next to the outputs, or removes a stale one
/// when the run was clean.
pub(crate) fn write_errors(
    cfg: &RunConfig,
    command: &str,
    failures: &[SubjectError],
) -> Result<()> {
    let path = cfg.out(&format!("{command}_errors.csv"));
    if failures.is_empty() {
        if path.exists() {
            fs::remove_file(&path)?;
        }
        return Ok(());
    }
    let mut w = csv::Writer::from_path(&path)?;
    for f in failures {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Manifest with the effective config echoed in.
pub(crate) fn manifest(cfg: &RunConfig, command: &str, counts: Value) -> Result<Value> {
    Ok(json!({
        "command": command,
        "seed": cfg.seed,
        "counts": counts,
        "config": serde_json::to_value(cfg)?,
    }))
}

pub(crate) fn finish(
    cfg: &RunConfig,
    command: &'static str,
    processed: usize,
    failures: Vec<SubjectError>,
    counts: Value,
) -> Result<Outcome> {
    write_errors(cfg, command, &failures)?;
    let mut counts = counts;
    counts["failed"] = json!(failures.len());
    let manifest = manifest(cfg, command, counts)?;
    write_json(&cfg.out(&format!("{command}_manifest.json")), &manifest)?;
    Ok(Outcome {
        command,
        processed,
        failures,
        manifest,
    })
}
