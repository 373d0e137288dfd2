use serde::{Deserialize, Serialize};

use super::{event_count, SurvivalRecord};
use crate::error::{check_len, Error, Result};

/// Which subjects count as "at risk" at an event time `t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSet {
    /// `{j : t_j >= t_i}` (Breslow; tied subjects share a risk set).
    #[default]
    Inclusive,
    /// `{j : t_j > t_i} ∪ {i}`.
    Strict,
}

impl RiskSet {
    pub fn from_inclusive(inclusive: bool) -> Self {
        if inclusive {
            RiskSet::Inclusive
        } else {
            RiskSet::Strict
        }
    }
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    const EMPTY: Self = Self {
        max: f64::NEG_INFINITY,
        scaled: 0.0,
    };

    fn push(&mut self, x: f64) {
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn with(mut self, x: f64) -> Self {
        self.push(x);
        self
    }

    fn value(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

fn validate(risks: &[f64], records: &[SurvivalRecord]) -> Result<usize> {
    check_len(records.len(), risks.len())?;
    if records.is_empty() {
        return Err(Error::InvalidInput(
            "cox loss needs at least one subject".into(),
        ));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("risks must be finite".into()));
    }
    match event_count(records) {
        0 => Err(Error::NoEvents),
        n => Ok(n),
    }
}

/// Indices sorted by time, grouped into runs of identical time.
fn time_groups(records: &[SurvivalRecord], descending: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = records[a].time_days.total_cmp(&records[b].time_days);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in order {
        match groups.last_mut() {
            Some(g) if records[g[0]].time_days == records[idx].time_days => g.push(idx),
            _ => groups.push(vec![idx]),
        }
    }
    groups
}

/// `log Σ_{j ∈ R(i)} exp(ŷ_j)` for each event subject `i`, NaN elsewhere.
fn risk_set_lse(risks: &[f64], records: &[SurvivalRecord], rule: RiskSet) -> Vec<f64> {
    let mut lse = vec![f64::NAN; risks.len()];
    let mut acc = LogSumExp::EMPTY;
    for group in time_groups(records, true) {
        match rule {
            RiskSet::Inclusive => {
                for &j in &group {
                    acc.push(risks[j]);
                }
                let v = acc.value();
                for &i in group.iter().filter(|&&i| records[i].event) {
                    lse[i] = v;
                }
            }
            RiskSet::Strict => {
                for &i in group.iter().filter(|&&i| records[i].event) {
                    lse[i] = acc.with(risks[i]).value();
                }
                for &j in &group {
                    acc.push(risks[j]);
                }
            }
        }
    }
    lse
}

/// Negative Cox partial log-likelihood averaged over observed events.
pub fn cox_loss(risks: &[f64], records: &[SurvivalRecord], rule: RiskSet) -> Result<f64> {
    let n_events = validate(risks, records)?;
    let lse = risk_set_lse(risks, records, rule);
    let total: f64 = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.event)
        .map(|(i, _)| lse[i] - risks[i])
        .sum();
    Ok(total / n_events as f64)
}

/// Analytic gradient of [`cox_loss`] with respect to each risk.
pub fn cox_loss_gradient(
    risks: &[f64],
    records: &[SurvivalRecord],
    rule: RiskSet,
) -> Result<Vec<f64>> {
    let n_events = validate(risks, records)?;
    let lse = risk_set_lse(risks, records, rule);

    // acc holds log Σ exp(-lse_i) over the events whose risk set contains k
    let mut acc = LogSumExp::EMPTY;
    let mut share = vec![0.0; risks.len()];
    for group in time_groups(records, false) {
        if rule == RiskSet::Inclusive {
            for &i in group.iter().filter(|&&i| records[i].event) {
                acc.push(-lse[i]);
            }
        }
        let earlier = acc.value();
        for &k in &group {
            share[k] = (risks[k] + earlier).exp();
            if rule == RiskSet::Strict && records[k].event {
                share[k] += (risks[k] - lse[k]).exp();
            }
        }
        if rule == RiskSet::Strict {
            for &i in group.iter().filter(|&&i| records[i].event) {
                acc.push(-lse[i]);
            }
        }
    }

    let scale = -1.0 / n_events as f64;
    Ok(records
        .iter()
        .zip(share)
        .map(|(r, s)| scale * (f64::from(u8::from(r.event)) - s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::finite_difference_gradient;
    use proptest::prelude::*;

    fn recs(items: &[(f64, bool)]) -> Vec<SurvivalRecord> {
        items
            .iter()
            .map(|&(t, e)| SurvivalRecord::event_at(t, e))
            .collect()
    }

    /// Term-by-term evaluation with explicit risk-set enumeration.
    fn brute_force_loss(risks: &[f64], records: &[SurvivalRecord], rule: RiskSet) -> f64 {
        let mut total = 0.0;
        let mut events = 0;
        for (i, ri) in records.iter().enumerate() {
            if !ri.event {
                continue;
            }
            events += 1;
            let denom: f64 = records
                .iter()
                .enumerate()
                .filter(|(j, rj)| match rule {
                    RiskSet::Inclusive => rj.time_days >= ri.time_days,
                    RiskSet::Strict => rj.time_days > ri.time_days || *j == i,
                })
                .map(|(j, _)| risks[j].exp())
                .sum();
            total += risks[i] - denom.ln();
        }
        -total / events as f64
    }

    #[test]
    fn single_event_loss_is_zero() {
        for a in [-3.0, 0.0, 0.42, 10.0] {
            let r = recs(&[(5.0, true)]);
            assert_eq!(cox_loss(&[a], &r, RiskSet::Inclusive).unwrap(), 0.0);
            assert_eq!(cox_loss(&[a], &r, RiskSet::Strict).unwrap(), 0.0);
            assert_eq!(
                cox_loss_gradient(&[a], &r, RiskSet::Inclusive).unwrap(),
                vec![0.0]
            );
        }
    }

    #[test]
    fn two_subject_case() {
        let r = recs(&[(1.0, true), (2.0, false)]);
        let loss = cox_loss(&[0.0, 0.0], &r, RiskSet::Inclusive).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let g = cox_loss_gradient(&[0.0, 0.0], &r, RiskSet::Inclusive).unwrap();
        let numeric = finite_difference_gradient(
            |x| cox_loss(x, &r, RiskSet::Inclusive).unwrap(),
            &[0.0, 0.0],
            1e-5,
        );
        // one event, softmax weight 1/2 each: -(1 - 1/2) and +1/2
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
        for (a, n) in g.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6);
        }
    }

    #[test]
    fn three_events_match_direct_summation() {
        let r = recs(&[(1.0, true), (2.0, true), (3.0, true)]);
        let risks = [3.0, 2.0, 1.0];
        // -(1/3) [ (3 - ln(e^3+e^2+e^1)) + (2 - ln(e^2+e^1)) + (1 - ln e^1) ]
        let expected = brute_force_loss(&risks, &r, RiskSet::Inclusive);
        let got = cox_loss(&risks, &r, RiskSet::Inclusive).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.24028921732086772).abs() < 1e-14);
    }

    #[test]
    fn strict_rule_separates_tied_times() {
        let r = recs(&[(1.0, true), (1.0, true), (2.0, false)]);
        let risks = [0.3, -0.2, 0.9];
        for rule in [RiskSet::Inclusive, RiskSet::Strict] {
            let got = cox_loss(&risks, &r, rule).unwrap();
            assert!((got - brute_force_loss(&risks, &r, rule)).abs() < 1e-14);
        }
        assert_ne!(
            cox_loss(&risks, &r, RiskSet::Inclusive).unwrap(),
            cox_loss(&risks, &r, RiskSet::Strict).unwrap()
        );
    }

    #[test]
    fn no_events_is_an_error() {
        let r = recs(&[(1.0, false), (2.0, false)]);
        assert_eq!(
            cox_loss(&[0.0, 0.0], &r, RiskSet::Inclusive),
            Err(Error::NoEvents)
        );
        assert_eq!(
            cox_loss_gradient(&[0.0, 0.0], &r, RiskSet::Inclusive),
            Err(Error::NoEvents)
        );
    }

    #[test]
    fn shared_risk_set_gradient_sums_to_zero() {
        let r = recs(&[(4.0, true), (4.0, false), (4.0, true), (4.0, true)]);
        let g = cox_loss_gradient(&[0.1, 2.0, -1.0, 0.5], &r, RiskSet::Inclusive).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn extreme_risks_stay_finite() {
        let r = recs(&[(1.0, true), (2.0, true), (3.0, false), (4.0, true)]);
        let risks = [700.0, -700.0, 699.0, -700.0];
        for rule in [RiskSet::Inclusive, RiskSet::Strict] {
            assert!(cox_loss(&risks, &r, rule).unwrap().is_finite());
            assert!(cox_loss_gradient(&risks, &r, rule)
                .unwrap()
                .iter()
                .all(|g| g.is_finite()));
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalRecord>)> {
        (1usize..=20).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec((1u32..8, any::<bool>()), n),
            )
                .prop_map(|(risks, raw)| {
                    let mut records: Vec<_> = raw
                        .into_iter()
                        .map(|(t, e)| SurvivalRecord::event_at(t as f64, e))
                        .collect();
                    records[0].event = true;
                    (risks, records)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((risks, records) in instance(), strict in any::<bool>()) {
            let rule = RiskSet::from_inclusive(!strict);
            let got = cox_loss(&risks, &records, rule).unwrap();
            let expected = brute_force_loss(&risks, &records, rule);
            prop_assert!((got - expected).abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_finite_differences((risks, records) in instance(), strict in any::<bool>()) {
            let rule = RiskSet::from_inclusive(!strict);
            let analytic = cox_loss_gradient(&risks, &records, rule).unwrap();
            let numeric = finite_difference_gradient(
                |r| cox_loss(r, &records, rule).unwrap(), &risks, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                prop_assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3));
            }
        }

        #[test]
        fn permutation_invariant((risks, records) in instance(), seed in any::<u64>()) {
            let n = risks.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let r2: Vec<f64> = perm.iter().map(|&i| risks[i]).collect();
            let rec2: Vec<_> = perm.iter().map(|&i| records[i].clone()).collect();
            let a = cox_loss(&risks, &records, RiskSet::Inclusive).unwrap();
            let b = cox_loss(&r2, &rec2, RiskSet::Inclusive).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
