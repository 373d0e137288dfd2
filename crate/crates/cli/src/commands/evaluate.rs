use std::collections::HashMap;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use survcam_core::metrics::{
    c_index, km_curve, log_rank, stratify_by_median, time_dependent_auc, KMCurve, LogRankResult,
    RiskGroup,
};
use survcam_core::survival::SurvivalRecord;

use super::infer::read_predictions;
use super::{finish, Outcome, SubjectError};
use crate::config::RunConfig;
use crate::formats::{read_labels, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub subjects: usize,
    pub events: usize,
    pub km: KMCurve,
}

/// Contents of `metrics.json`. A metric that cannot be computed on the
/// evaluated subjects is `null` and its reason is listed in `errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `test` when a split from `train` exists, `all` otherwise.
    pub subset: String,
    pub subjects: usize,
    pub events: usize,
    pub horizon: f64,
    pub c_index: Option<f64>,
    pub t_auc: Option<f64>,
    pub log_rank: Option<LogRankResult>,
    pub low: Option<GroupMetrics>,
    pub high: Option<GroupMetrics>,
    pub errors: Vec<String>,
}

fn read_split(cfg: &RunConfig) -> Result<Option<HashMap<String, String>>> {
    let path = cfg.out("split.csv");
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(&path)?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        out.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(Some(out))
}

fn write_km_csv(cfg: &RunConfig, name: &str, km: &KMCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(cfg.out(name))?;
    w.write_record(["time_days", "at_risk", "events", "survival"])?;
    for i in 0..km.times.len() {
        w.write_record([
            km.times[i].to_string(),
            km.at_risk[i].to_string(),
            km.events[i].to_string(),
            km.survival[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `predictions.csv` against the labels of the held-out subjects.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let predictions: HashMap<String, f64> = read_predictions(cfg)?.into_iter().collect();
    let labels = read_labels(&cfg.labels_path())?;
    let split = read_split(cfg)?;
    let subset = if split.is_some() { "test" } else { "all" };

    let mut failures = Vec::new();
    let mut risks = Vec::new();
    let mut records: Vec<SurvivalRecord> = Vec::new();
    for r in labels {
        if let Some(s) = &split {
            if s.get(&r.subject_id).map(String::as_str) != Some("test") {
                continue;
            }
        }
        match predictions.get(&r.subject_id) {
            Some(&risk) => {
                risks.push(risk);
                records.push(r);
            }
            None => failures.push(SubjectError {
                subject_id: r.subject_id,
                error: "no prediction".into(),
            }),
        }
    }

    let mut errors = Vec::new();
    let mut keep = |r: survcam_core::Result<f64>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{what}: {e}"));
            None
        }
    };
    let c = keep(c_index(&risks, &records), "c_index");
    let auc = keep(time_dependent_auc(&risks, &records, cfg.horizon), "t_auc");

    let (mut low, mut high, mut lr) = (None, None, None);
    match stratify_by_median(&risks) {
        Ok(groups) => {
            let pick = |g: RiskGroup| -> Vec<SurvivalRecord> {
                records
                    .iter()
                    .zip(&groups)
                    .filter(|(_, &x)| x == g)
                    .map(|(r, _)| r.clone())
                    .collect()
            };
            let (lo, hi) = (pick(RiskGroup::Low), pick(RiskGroup::High));
            let summary = |rs: &[SurvivalRecord]| GroupMetrics {
                subjects: rs.len(),
                events: rs.iter().filter(|r| r.event).count(),
                km: km_curve(rs),
            };
            low = Some(summary(&lo));
            high = Some(summary(&hi));
            match log_rank(&hi, &lo) {
                Ok(res) => lr = Some(res),
                Err(e) => errors.push(format!("log_rank: {e}")),
            }
        }
        Err(e) => errors.push(format!("stratification: {e}")),
    }

    for (name, g) in [("km_low.csv", &low), ("km_high.csv", &high)] {
        if let Some(g) = g {
            write_km_csv(cfg, name, &g.km)?;
        }
    }
    let metrics = Metrics {
        subset: subset.to_string(),
        subjects: records.len(),
        events: records.iter().filter(|r| r.event).count(),
        horizon: cfg.horizon,
        c_index: c,
        t_auc: auc,
        log_rank: lr,
        low,
        high,
        errors,
    };
    write_json(&cfg.out("metrics.json"), &metrics)?;
    for e in &metrics.errors {
        log::warn!("{e}");
        failures.push(SubjectError {
            subject_id: String::new(),
            error: e.clone(),
        });
    }
    finish(
        cfg,
        "evaluate",
        metrics.subjects,
        failures,
        json!({
            "subset": subset,
            "subjects": metrics.subjects,
            "c_index": metrics.c_index,
            "t_auc": metrics.t_auc,
            "log_rank_p": metrics.log_rank.map(|r| r.p_value),
        }),
    )
}
