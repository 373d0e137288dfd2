//! Survival evaluation: concordance, time-dependent AUC, Kaplan-Meier curves,
//! the log-rank test and median-risk stratification.

mod km;

pub use km::{km_curve, log_rank, KMCurve, LogRankResult};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::survival::SurvivalRecord;

/// Pair counts behind a concordance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Concordance {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl Concordance {
    pub fn index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64)
    }
}

/// Fenwick tree of counts over risk ranks.
struct RankCounter {
    tree: Vec<u64>,
}

impl RankCounter {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut total = 0;
        while i > 0 {
            total += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Dense ranks of `values`; equal values share a rank.
fn dense_ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks = values
        .iter()
        .map(|v| sorted.partition_point(|s| s.total_cmp(v).is_lt()))
        .collect();
    (ranks, sorted.len())
}

/// Counts pairs `(i, j)` with `e_i = 1` and `t_i < t_j`; a pair is
/// concordant when `risk_i > risk_j` and tied when the risks are equal.
pub fn concordance(risks: &[f64], records: &[SurvivalRecord]) -> Result<Concordance> {
    check_len(records.len(), risks.len())?;
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::InvalidInput("risks must not be NaN".into()));
    }
    let (ranks, n_ranks) = dense_ranks(risks);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time_days.total_cmp(&records[a].time_days));

    let mut later = RankCounter::new(n_ranks);
    let mut inserted = 0u64;
    let mut counts = Concordance::default();
    let mut start = 0;
    while start < order.len() {
        let t = records[order[start]].time_days;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| records[i].time_days == t)
                .count();
        for &i in order[start..end].iter().filter(|&&i| records[i].event) {
            let below = later.below(ranks[i]);
            let at_or_below = later.below(ranks[i] + 1);
            counts.comparable += inserted;
            counts.concordant += below;
            counts.tied += at_or_below - below;
        }
        for &i in &order[start..end] {
            later.add(ranks[i]);
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

/// Harrell's concordance index.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(
            "c-index needs at least two subjects".into(),
        ));
    }
    concordance(risks, records)?.index()
}

/// Cumulative/dynamic AUC at `horizon`: cases had the event by the horizon,
/// controls are still event-free after it. Subjects censored on or before
/// the horizon are left out. Ties count one half.
pub fn time_dependent_auc(risks: &[f64], records: &[SurvivalRecord], horizon: f64) -> Result<f64> {
    check_len(records.len(), risks.len())?;
    let mut labelled: Vec<(f64, bool)> = Vec::new();
    for (r, rec) in risks.iter().zip(records) {
        if rec.time_days > horizon {
            labelled.push((*r, false));
        } else if rec.event {
            labelled.push((*r, true));
        }
    }
    let n_cases = labelled.iter().filter(|(_, c)| *c).count();
    let n_controls = labelled.len() - n_cases;
    if n_cases == 0 {
        return Err(Error::NoCases(horizon));
    }
    if n_controls == 0 {
        return Err(Error::NoControls(horizon));
    }
    if labelled.iter().any(|(r, _)| r.is_nan()) {
        return Err(Error::InvalidInput("risks must not be NaN".into()));
    }

    // Mann-Whitney: mid-ranks over the pooled sample
    labelled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut case_rank_sum = 0.0;
    let mut start = 0;
    while start < labelled.len() {
        let v = labelled[start].0;
        let end = start
            + labelled[start..]
                .iter()
                .take_while(|(r, _)| *r == v)
                .count();
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let cases = labelled[start..end].iter().filter(|(_, c)| *c).count();
        case_rank_sum += mid_rank * cases as f64;
        start = end;
    }
    let n1 = n_cases as f64;
    let u = case_rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n_controls as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskGroup {
    Low,
    High,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Risks strictly above the median are high, the rest low.
pub fn stratify_by_median(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(Error::InvalidInput(
            "stratification needs at least two risks".into(),
        ));
    }
    let m = median(risks).expect("non-empty");
    Ok(risks
        .iter()
        .map(|&r| {
            if r > m {
                RiskGroup::High
            } else {
                RiskGroup::Low
            }
        })
        .collect())
}
