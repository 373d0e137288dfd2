use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use survcam_core::survival::SurvivalRecord;
use survcam_core::synth::{gen_cohort, gen_layouts};

use super::{ensure_dir, manifest, Outcome};
use crate::config::RunConfig;
use crate::formats::{write_fmap, write_json, write_labels};

/// Ground truth kept alongside a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub subject_id: String,
    pub eta: f64,
    pub lesion_region: String,
}

/// Writes a synthetic cohort under `data_dir`: one feature map and one boxes
/// file per subject, `labels.csv`, `truth.csv`, `layouts.json` for completer
/// training and `manifest.json`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.synth.n_subjects == 0 {
        bail!("empty cohort");
    }
    let subjects = gen_cohort(&cfg.synth, &cfg.region_names)?;
    ensure_dir(&cfg.features_dir())?;
    ensure_dir(&cfg.boxes_dir())?;

    let mut records: Vec<SurvivalRecord> = Vec::with_capacity(subjects.len());
    let mut truth = csv::Writer::from_path(cfg.data_dir.join("truth.csv"))?;
    for s in &subjects {
        let id = &s.record.subject_id;
        write_fmap(&cfg.feature_path(id), &s.feature_map)?;
        write_json(&cfg.boxes_path(id), &s.regions)?;
        truth.serialize(TruthRow {
            subject_id: id.clone(),
            eta: s.eta,
            lesion_region: cfg.region_names.get(s.lesion_region).to_string(),
        })?;
        records.push(s.record.clone());
    }
    truth.flush()?;
    write_labels(&cfg.labels_path(), &records)?;

    let layouts = gen_layouts(cfg.n_layouts, cfg.synth.layout_jitter, cfg.seed);
    write_json(&cfg.layouts_path(), &layouts)?;

    let events = records.iter().filter(|r| r.event).count();
    let manifest = manifest(
        cfg,
        "synth",
        json!({
            "subjects": records.len(),
            "feature_maps": records.len(),
            "box_files": records.len(),
            "events": events,
            "censored": records.len() - events,
            "layouts": layouts.len(),
        }),
    )?;
    write_json(&cfg.data_dir.join("manifest.json"), &manifest)?;
    Ok(Outcome {
        command: "synth",
        processed: records.len(),
        failures: Vec::new(),
        manifest,
    })
}
