use std::fs;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use survcam_core::region::{complete, CompleterNet, RegionSet};
use survcam_core::regional::{regional_report, top_k, RegionRisk};
use survcam_core::riskcam::{risk_cam, upsample_bilinear, ActivationMap};
use survcam_core::survival::{avg_pool, predict_risk, FeatureMap, RiskHead};

use super::{ensure_dir, finish, per_subject, CompleterFile, ModelFile, Outcome};
use crate::config::RunConfig;
use crate::formats::{
    encode_pgm, read_fmap, read_json, read_labels, write_grid_csv, write_json, BoxesFile,
};

fn load_head(cfg: &RunConfig) -> Result<RiskHead> {
    let path = cfg.out("model.json");
    if !path.exists() {
        bail!("missing model file {}; run train first", path.display());
    }
    let model: ModelFile = read_json(&path)?;
    Ok(RiskHead::new(model.head.weights, model.head.bias)?)
}

fn load_completer(cfg: &RunConfig) -> Result<Option<CompleterNet>> {
    let path = cfg.out("completer.json");
    if !path.exists() {
        return Ok(None);
    }
    let file: CompleterFile = read_json(&path)?;
    // re-validate the parameter count
    let net = CompleterNet::from_params(file.net.hidden_dim(), file.net.params().to_vec())
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(net))
}

fn subject_ids(cfg: &RunConfig) -> Result<Vec<String>> {
    Ok(read_labels(&cfg.labels_path())?
        .into_iter()
        .map(|r| r.subject_id)
        .collect())
}

fn global_risk(head: &RiskHead, fm: &FeatureMap) -> Result<f64> {
    Ok(predict_risk(head, &avg_pool(fm))?)
}

/// Risk map at feature resolution and upsampled to `image_size`.
fn cam_at(
    cfg: &RunConfig,
    head: &RiskHead,
    fm: &FeatureMap,
) -> Result<(ActivationMap, ActivationMap)> {
    let native = risk_cam(fm, head)?;
    let up = upsample_bilinear(&native, cfg.image_size, cfg.image_size)?;
    Ok((native, up))
}

/// Reads a subject's boxes (regions or detector proposals) and fills
/// undetected regions when a completer is available. Returns the names of
/// regions that are still undetected.
pub fn resolve_regions(
    cfg: &RunConfig,
    subject: &str,
    completer: Option<&CompleterNet>,
) -> Result<(RegionSet, Vec<String>)> {
    let file: BoxesFile = read_json(&cfg.boxes_path(subject))?;
    let mut rs = file.into_regions(&cfg.region_names)?;
    if rs.boxes.iter().any(|b| !b.detected) {
        if let Some(net) = completer {
            let done = complete(&rs, net)?;
            if done.low_confidence {
                log::warn!("{subject}: no region detected; completion is unanchored");
            }
            rs = done.regions;
        }
    }
    let missing = rs
        .boxes
        .iter()
        .filter(|b| !b.detected && !b.completed)
        .map(|b| b.name.clone())
        .collect();
    Ok((rs, missing))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    subject_id: String,
    risk: f64,
}

/// Writes `predictions.csv` with the global risk of every subject.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Outcome> {
    let head = load_head(cfg)?;
    let ids = subject_ids(cfg)?;
    let (done, failures) = per_subject(&ids, |id| {
        global_risk(&head, &read_fmap(&cfg.feature_path(id))?)
    });
    let mut w = csv::Writer::from_path(cfg.out("predictions.csv"))?;
    for (subject_id, risk) in &done {
        w.serialize(PredictionRow {
            subject_id: subject_id.clone(),
            risk: *risk,
        })?;
    }
    w.flush()?;
    finish(
        cfg,
        "predict",
        ids.len(),
        failures,
        json!({ "predicted": done.len() }),
    )
}

/// Reads `predictions.csv` back as `(subject_id, risk)` pairs.
pub fn read_predictions(cfg: &RunConfig) -> Result<Vec<(String, f64)>> {
    let path = cfg.out("predictions.csv");
    if !path.exists() {
        bail!("missing {}; run predict first", path.display());
    }
    let mut reader = csv::Reader::from_path(&path)?;
    reader
        .deserialize::<PredictionRow>()
        .map(|row| {
            let row = row.with_context(|| format!("parsing {}", path.display()))?;
            Ok((row.subject_id, row.risk))
        })
        .collect()
}

/// Writes `cam/<subject>.pgm`, the min-max normalized map upsampled to
/// `image_size`, and `cam/<subject>.csv`, the unquantized map at feature
/// resolution.
pub fn cmd_cam(cfg: &RunConfig) -> Result<Outcome> {
    let head = load_head(cfg)?;
    let ids = subject_ids(cfg)?;
    let dir = cfg.out("cam");
    ensure_dir(&dir)?;
    let (done, failures) = per_subject(&ids, |id| {
        let fm = read_fmap(&cfg.feature_path(id))?;
        let (native, up) = cam_at(cfg, &head, &fm)?;
        let pgm = encode_pgm(up.width(), up.height(), &up.to_gray8());
        fs::write(dir.join(format!("{id}.pgm")), pgm)?;
        write_grid_csv(
            &dir.join(format!("{id}.csv")),
            native.width(),
            native.values(),
        )
    });
    finish(
        cfg,
        "cam",
        ids.len(),
        failures,
        json!({ "maps": done.len() }),
    )
}

/// Writes `completed/<subject>.json` with every region resolved.
pub fn cmd_complete(cfg: &RunConfig) -> Result<Outcome> {
    let completer = load_completer(cfg)?;
    let ids = subject_ids(cfg)?;
    let dir = cfg.out("completed");
    ensure_dir(&dir)?;
    let (done, failures) = per_subject(&ids, |id| {
        let (rs, missing) = resolve_regions(cfg, id, completer.as_ref())?;
        if !missing.is_empty() {
            bail!(
                "{} undetected regions and no completer model",
                missing.len()
            );
        }
        write_json(&dir.join(format!("{id}.json")), &rs)?;
        Ok(rs.boxes.iter().filter(|b| b.completed).count())
    });
    let filled: usize = done.iter().map(|(_, n)| n).sum();
    finish(
        cfg,
        "complete",
        ids.len(),
        failures,
        json!({ "completed_subjects": done.len(), "filled_regions": filled }),
    )
}

/// Regional risk report for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub global_risk: f64,
    /// Names of the `top_k` highest-risk regions.
    pub top_k: Vec<String>,
    pub entries: Vec<RegionRisk>,
    /// Regions left undetected because no completer was available; they
    /// contribute nothing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undetected: Vec<String>,
}

/// Writes `reports/<subject>.json` and `reports/<subject>.csv`: all 29
/// regions ranked by regional risk.
pub fn cmd_report(cfg: &RunConfig) -> Result<Outcome> {
    let head = load_head(cfg)?;
    let completer = load_completer(cfg)?;
    let ids = subject_ids(cfg)?;
    let dir = cfg.out("reports");
    ensure_dir(&dir)?;
    let (done, failures) = per_subject(&ids, |id| {
        let fm = read_fmap(&cfg.feature_path(id))?;
        let (rs, undetected) = resolve_regions(cfg, id, completer.as_ref())?;
        let (_, am) = cam_at(cfg, &head, &fm)?;
        let risk = global_risk(&head, &fm)?;
        let report = regional_report(&am, &rs, risk)?;
        let top: Vec<String> = top_k(&report, cfg.top_k)?
            .iter()
            .map(|e| e.name.clone())
            .collect();
        let out = SubjectReport {
            subject_id: id.to_string(),
            global_risk: risk,
            top_k: top,
            entries: report.entries,
            undetected,
        };
        write_json(&dir.join(format!("{id}.json")), &out)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{id}.csv")))?;
        w.write_record([
            "rank",
            "name",
            "activation_sum",
            "intensity_fraction",
            "regional_risk",
        ])?;
        for e in &out.entries {
            w.write_record([
                e.rank.to_string(),
                e.name.clone(),
                e.activation_sum.to_string(),
                e.intensity_fraction.to_string(),
                e.regional_risk.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    });
    finish(
        cfg,
        "report",
        ids.len(),
        failures,
        json!({ "reports": done.len() }),
    )
}
