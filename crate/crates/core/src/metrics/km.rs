use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

/// Product-limit survival estimate, one step per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub survival: Vec<f64>,
}

impl KMCurve {
    /// `S(t)`, right-continuous; 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Distinct event times with `(at_risk, events)` of each group.
fn event_table(groups: &[&[SurvivalRecord]]) -> Vec<(f64, Vec<(usize, usize)>)> {
    let mut times: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.iter().filter(|r| r.event).map(|r| r.time_days))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let per_group = groups
                .iter()
                .map(|g| {
                    let at_risk = g.iter().filter(|r| r.time_days >= t).count();
                    let events = g.iter().filter(|r| r.event && r.time_days == t).count();
                    (at_risk, events)
                })
                .collect();
            (t, per_group)
        })
        .collect()
}

pub fn km_curve(records: &[SurvivalRecord]) -> KMCurve {
    let mut curve = KMCurve {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        survival: Vec::new(),
    };
    let mut s = 1.0;
    for (t, counts) in event_table(&[records]) {
        let (n, d) = counts[0];
        s *= 1.0 - d as f64 / n as f64;
        curve.times.push(t);
        curve.at_risk.push(n);
        curve.events.push(d);
        curve.survival.push(s);
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub p_value: f64,
    pub observed_a: usize,
    pub expected_a: f64,
}

/// Chi-square (1 dof) upper tail `Q(1/2, x/2)`.
fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(0.5, x / 2.0)
    }
}

/// Two-group log-rank test.
pub fn log_rank(group_a: &[SurvivalRecord], group_b: &[SurvivalRecord]) -> Result<LogRankResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::InvalidInput(
            "log-rank needs two non-empty groups".into(),
        ));
    }
    let (mut observed, mut expected, mut variance) = (0usize, 0.0, 0.0);
    for (_, counts) in event_table(&[group_a, group_b]) {
        let [(na, da), (nb, db)] = [counts[0], counts[1]];
        let n = (na + nb) as f64;
        let d = (da + db) as f64;
        let share = na as f64 / n;
        observed += da;
        expected += d * share;
        if n > 1.0 {
            variance += d * share * (1.0 - share) * (n - d) / (n - 1.0);
        }
    }
    if variance <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let diff = observed as f64 - expected;
    let chi_square = diff * diff / variance;
    Ok(LogRankResult {
        chi_square,
        p_value: chi2_sf_1dof(chi_square),
        observed_a: observed,
        expected_a: expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(items: &[(f64, bool)]) -> Vec<SurvivalRecord> {
        items
            .iter()
            .map(|&(t, e)| SurvivalRecord::event_at(t, e))
            .collect()
    }

    #[test]
    fn four_subject_example() {
        let km = km_curve(&recs(&[
            (1.0, true),
            (2.0, true),
            (3.0, false),
            (4.0, false),
        ]));
        assert_eq!(km.times, vec![1.0, 2.0]);
        assert_eq!(km.survival_at(1.0), 0.75);
        assert_eq!(km.survival_at(2.0), 0.5);
        assert_eq!(km.survival_at(0.5), 1.0);
        assert_eq!(km.survival_at(10.0), 0.5);
        assert_eq!(km.at_risk, vec![4, 3]);
    }

    #[test]
    fn all_censored_stays_at_one() {
        let km = km_curve(&recs(&[(1.0, false), (2.0, false)]));
        assert!(km.times.is_empty());
        assert_eq!(km.survival_at(5.0), 1.0);
    }

    #[test]
    fn uncensored_matches_empirical_survival() {
        let times = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let records: Vec<_> = times
            .iter()
            .map(|&t| SurvivalRecord::event_at(t, true))
            .collect();
        let km = km_curve(&records);
        for t in [0.5, 1.0, 2.5, 4.0, 6.0, 9.0] {
            let alive = times.iter().filter(|&&x| x > t).count() as f64 / times.len() as f64;
            assert!((km.survival_at(t) - alive).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_groups() {
        let g = recs(&[(1.0, true), (2.0, false), (3.0, true), (5.0, true)]);
        let res = log_rank(&g, &g).unwrap();
        assert_eq!(res.chi_square, 0.0);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn known_statistic() {
        // hand-computed: O_A = 2, E_A = 1/2 + 1/3 + 1/2, V = 1/4 + 2/9 + 1/4
        let a = recs(&[(1.0, true), (3.0, true)]);
        let b = recs(&[(2.0, true), (4.0, false)]);
        let res = log_rank(&a, &b).unwrap();
        let e = 0.5 + 1.0 / 3.0 + 0.5;
        let v = 0.25 + 2.0 / 9.0 + 0.25;
        let chi = (2.0 - e) * (2.0 - e) / v;
        assert!((res.chi_square - chi).abs() < 1e-14);
        // Q(1/2, x/2) = erfc(sqrt(x/2))
        let p = statrs::function::erf::erfc((chi / 2.0).sqrt());
        assert!((res.p_value - p).abs() <= 1e-10 * p);
    }

    #[test]
    fn no_events_is_zero_variance() {
        let a = recs(&[(1.0, false)]);
        let b = recs(&[(2.0, false)]);
        assert_eq!(log_rank(&a, &b), Err(Error::ZeroVariance));
        assert!(log_rank(&[], &b).is_err());
    }

    proptest! {
        #[test]
        fn survival_non_increasing(items in prop::collection::vec((1u8..30, any::<bool>()), 1..60)) {
            let records: Vec<_> = items.iter().map(|&(t, e)| SurvivalRecord::event_at(f64::from(t), e)).collect();
            let km = km_curve(&records);
            let mut prev = 1.0;
            for &s in &km.survival {
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!(s <= prev);
                prev = s;
            }
        }

        #[test]
        fn label_swap_symmetry(
            a in prop::collection::vec((1u8..20, any::<bool>()), 1..30),
            b in prop::collection::vec((1u8..20, any::<bool>()), 1..30),
        ) {
            let to = |v: &[(u8, bool)]| v.iter().map(|&(t, e)| SurvivalRecord::event_at(f64::from(t), e)).collect::<Vec<_>>();
            let (ra, rb) = (to(&a), to(&b));
            if let (Ok(x), Ok(y)) = (log_rank(&ra, &rb), log_rank(&rb, &ra)) {
                prop_assert!((x.chi_square - y.chi_square).abs() <= 1e-9 * x.chi_square.max(1e-12));
                prop_assert!((x.p_value - y.p_value).abs() <= 1e-9);
            }
        }
    }
}
