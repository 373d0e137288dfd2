use std::collections::HashMap;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use survcam_core::region::{completer_train, CompleterConfig, CompleterNet, Layout};
use survcam_core::survival::{
    avg_pool, event_count, fit_with_validation, Cohort, RiskHead, SurvivalRecord,
};
use survcam_core::Error as CoreError;

use super::{ensure_dir, finish, per_subject, Outcome};
use crate::config::RunConfig;
use crate::formats::{read_fmap, read_json, read_labels, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Persisted risk head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub head: RiskHead,
    pub best_epoch: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Persisted region completer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleterFile {
    pub config: CompleterConfig,
    pub final_loss: Option<f64>,
    pub net: CompleterNet,
}

/// Shuffles events and censored subjects separately, then cuts each
/// stratum into test, validation and training parts, so every split keeps
/// the cohort's event ratio up to rounding.
pub fn stratified_split(
    events: &[bool],
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; events.len()];
    for stratum in [true, false] {
        let mut idx: Vec<usize> = (0..events.len())
            .filter(|&i| events[i] == stratum)
            .collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        let n_val = ((idx.len() - n_test) as f64 * val_fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    out
}

/// Fits the risk head on the training split, keeping the epoch with the
/// lowest validation loss. When `layouts.json` holds any layouts the region
/// completer is trained as well.
pub fn cmd_train(cfg: &RunConfig) -> Result<Outcome> {
    let labels = read_labels(&cfg.labels_path())?;
    let ids: Vec<String> = labels.iter().map(|r| r.subject_id.clone()).collect();
    let (pooled, failures) =
        per_subject(&ids, |id| Ok(avg_pool(&read_fmap(&cfg.feature_path(id))?)));
    let by_id: HashMap<&str, &SurvivalRecord> =
        labels.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    let records: Vec<SurvivalRecord> = pooled
        .iter()
        .map(|(id, _)| by_id[id.as_str()].clone())
        .collect();
    let features: Vec<Vec<f64>> = pooled.into_iter().map(|(_, x)| x).collect();
    if features.is_empty() {
        bail!("no subject has a readable feature map");
    }

    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let split = stratified_split(&events, cfg.test_fraction, cfg.val_fraction, cfg.seed);
    let part = |which: Split| {
        let keep: Vec<usize> = (0..split.len()).filter(|&i| split[i] == which).collect();
        (
            keep.iter()
                .map(|&i| features[i].clone())
                .collect::<Vec<_>>(),
            keep.iter().map(|&i| records[i].clone()).collect::<Vec<_>>(),
        )
    };
    let (train_x, train_r) = part(Split::Train);
    let (val_x, val_r) = part(Split::Val);
    if event_count(&train_r) == 0 {
        bail!("no events in training split");
    }

    ensure_dir(&cfg.out_dir)?;
    let mut split_csv = csv::Writer::from_path(cfg.out("split.csv"))?;
    split_csv.write_record(["subject_id", "split"])?;
    for (r, s) in records.iter().zip(&split) {
        let name = match s {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        split_csv.write_record([r.subject_id.as_str(), name])?;
    }
    split_csv.flush()?;

    let validation = if val_r.is_empty() {
        None
    } else {
        Some(Cohort::new(&val_x, &val_r)?)
    };
    let fitted = match fit_with_validation(Cohort::new(&train_x, &train_r)?, validation, &cfg.train)
    {
        Err(CoreError::NoEvents) => bail!("no events in training split"),
        other => other?,
    };
    for w in &fitted.warnings {
        log::warn!("{w}");
    }
    write_json(
        &cfg.out("model.json"),
        &ModelFile {
            head: fitted.head.clone(),
            best_epoch: fitted.best_epoch,
            warnings: fitted.warnings.clone(),
        },
    )?;

    let mut trace = csv::Writer::from_path(cfg.out("train_trace.csv"))?;
    trace.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &fitted.trace {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        trace.write_record([e.epoch.to_string(), e.train_loss.to_string(), val])?;
    }
    trace.flush()?;

    let layouts: Vec<Layout> = if cfg.layouts_path().exists() {
        read_json(&cfg.layouts_path())?
    } else {
        Vec::new()
    };
    let completer_loss = if !layouts.is_empty() {
        let fit = completer_train(&layouts, &cfg.completer).context("training region completer")?;
        let final_loss = fit.losses.last().copied();
        write_json(
            &cfg.out("completer.json"),
            &CompleterFile {
                config: cfg.completer.clone(),
                final_loss,
                net: fit.net,
            },
        )?;
        final_loss
    } else {
        log::info!(
            "no layouts in {}; skipping completer training",
            cfg.layouts_path().display()
        );
        None
    };

    let count = |which: Split| split.iter().filter(|&&s| s == which).count();
    let events_in = |which: Split| {
        split
            .iter()
            .zip(&records)
            .filter(|(&s, r)| s == which && r.event)
            .count()
    };
    let first = &fitted.trace[0];
    let last = fitted.trace.last().expect("trace holds the initialization");
    finish(
        cfg,
        "train",
        records.len(),
        failures,
        json!({
            "train": count(Split::Train),
            "val": count(Split::Val),
            "test": count(Split::Test),
            "train_events": events_in(Split::Train),
            "val_events": events_in(Split::Val),
            "test_events": events_in(Split::Test),
            "best_epoch": fitted.best_epoch,
            "initial_val_loss": first.val_loss,
            "final_val_loss": last.val_loss,
            "completer_final_loss": completer_loss,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_event_ratio() {
        let events: Vec<bool> = (0..103).map(|i| i % 5 != 0).collect();
        let split = stratified_split(&events, 0.2, 0.125, 3);
        let total_ratio = events.iter().filter(|&&e| e).count() as f64 / events.len() as f64;
        for which in [Split::Train, Split::Val, Split::Test] {
            let n = split.iter().filter(|&&s| s == which).count();
            let e = split
                .iter()
                .zip(&events)
                .filter(|(&s, &ev)| s == which && ev)
                .count();
            assert!(
                (e as f64 - total_ratio * n as f64).abs() <= 1.0,
                "{which:?}: {e} of {n}"
            );
        }
        assert_eq!(split, stratified_split(&events, 0.2, 0.125, 3));
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let events = vec![true; 80];
        let split = stratified_split(&events, 0.2, 0.125, 0);
        let n = |w| split.iter().filter(|&&s| s == w).count();
        assert_eq!(
            (n(Split::Train), n(Split::Val), n(Split::Test)),
            (56, 8, 16)
        );
    }
}
