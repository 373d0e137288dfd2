//! Per-region share of the risk activation map and the ranked report built
//! from it.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::region::{RegionBox, RegionSet, N_REGIONS};
use crate::riskcam::ActivationMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRisk {
    pub name: String,
    pub activation_sum: f64,
    pub intensity_fraction: f64,
    pub regional_risk: f64,
    pub rank: usize,
}

/// Entries sorted by `regional_risk`, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalRiskReport {
    pub global_risk: f64,
    pub entries: Vec<RegionRisk>,
}

impl RegionalRiskReport {
    pub fn entry(&self, name: &str) -> Option<&RegionRisk> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Indices along one axis whose pixel centers fall in `[lo, hi)`.
fn covered(n: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let inside = |k: usize| {
        let center = (k as f64 + 0.5) / n as f64;
        center >= lo && center < hi
    };
    let start = (0..n).find(|&k| inside(k)).unwrap_or(n);
    let end = (start..n).find(|&k| !inside(k)).unwrap_or(n);
    start..end
}

/// Sum of map values over pixels whose centers lie inside the box. The box
/// is half-open, so boxes sharing an edge never count a pixel twice.
pub fn region_activation_sum(am: &ActivationMap, b: &RegionBox) -> f64 {
    let rows = covered(am.height(), b.y1, b.y2);
    let cols = covered(am.width(), b.x1, b.x2);
    rows.map(|i| cols.clone().map(|j| am.get(i, j)).sum::<f64>())
        .sum()
}

/// Activation sum of every region in set order.
pub fn region_sums(am: &ActivationMap, rs: &RegionSet) -> Vec<f64> {
    rs.boxes
        .iter()
        .map(|b| region_activation_sum(am, b))
        .collect()
}

/// Each region's share of the whole map's activation. Overlapping boxes
/// can make the shares add up to more than one.
pub fn regional_intensities(am: &ActivationMap, rs: &RegionSet) -> Vec<f64> {
    fractions_of(&region_sums(am, rs), am.total())
}

fn fractions_of(sums: &[f64], total: f64) -> Vec<f64> {
    sums.iter()
        .map(|s| {
            if total > 0.0 {
                (s / total).min(1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Scales each fraction by the global risk and ranks the regions. Ties keep
/// region-list order.
pub fn regional_risk_scores(
    rs: &RegionSet,
    sums: &[f64],
    fractions: &[f64],
    global_risk: f64,
) -> Result<RegionalRiskReport> {
    check_len(N_REGIONS, rs.boxes.len())?;
    check_len(N_REGIONS, sums.len())?;
    check_len(N_REGIONS, fractions.len())?;
    if !(global_risk > 0.0 && global_risk < 1.0) {
        return Err(Error::InvalidInput(format!(
            "global risk must lie in (0, 1), got {global_risk}"
        )));
    }
    let mut entries: Vec<RegionRisk> = rs
        .boxes
        .iter()
        .zip(sums.iter().zip(fractions))
        .map(|(b, (&activation_sum, &f))| RegionRisk {
            name: b.name.clone(),
            activation_sum,
            intensity_fraction: f,
            regional_risk: f * global_risk,
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| b.regional_risk.total_cmp(&a.regional_risk));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(RegionalRiskReport {
        global_risk,
        entries,
    })
}

/// Sums, fractions and ranking in one pass over the map.
pub fn regional_report(
    am: &ActivationMap,
    rs: &RegionSet,
    global_risk: f64,
) -> Result<RegionalRiskReport> {
    let sums = region_sums(am, rs);
    let fractions = fractions_of(&sums, am.total());
    regional_risk_scores(rs, &sums, &fractions, global_risk)
}

/// The `k` highest-risk entries.
pub fn top_k(report: &RegionalRiskReport, k: usize) -> Result<&[RegionRisk]> {
    if k == 0 || k > report.entries.len() {
        return Err(Error::InvalidInput(format!(
            "k must lie in 1..={}, got {k}",
            report.entries.len()
        )));
    }
    Ok(&report.entries[..k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{Layout, RegionNames};

    fn boxed(coords: [f64; 4]) -> RegionBox {
        RegionBox::detected("r", coords, 1.0)
    }

    /// 29 boxes exactly tiling the unit square: 28 columns in the top half,
    /// one box across the bottom half.
    fn partition() -> Layout {
        std::array::from_fn(|r| {
            if r < 28 {
                [r as f64 / 28.0, 0.0, (r + 1) as f64 / 28.0, 0.5]
            } else {
                [0.0, 0.5, 1.0, 1.0]
            }
        })
    }

    #[test]
    fn activation_sum_examples() {
        let ones = ActivationMap::new(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(
            region_activation_sum(&ones, &boxed([0.0, 0.0, 1.0, 1.0])),
            16.0
        );
        assert_eq!(
            region_activation_sum(&ones, &boxed([0.0, 0.0, 0.5, 0.5])),
            4.0
        );

        let mut v = vec![0.0; 16];
        v[0] = 3.0;
        let am = ActivationMap::new(4, 4, v).unwrap();
        assert_eq!(
            region_activation_sum(&am, &boxed([0.5, 0.5, 1.0, 1.0])),
            0.0
        );
        assert_eq!(
            region_activation_sum(&am, &boxed([0.0, 0.0, 1.0, 1.0])),
            am.total()
        );
        assert_eq!(
            region_activation_sum(&am, &RegionBox::undetected("missing")),
            0.0
        );
    }

    #[test]
    fn fraction_examples() {
        // left column sums to 3, right column to 1
        let am = ActivationMap::new(1, 2, vec![3.0, 1.0]).unwrap();
        let names = RegionNames::default();
        let mut layout = [[0.0; 4]; N_REGIONS];
        layout[0] = [0.0, 0.0, 0.5, 1.0];
        layout[1] = [0.5, 0.0, 1.0, 1.0];
        for c in layout.iter_mut().skip(2) {
            *c = [0.9, 0.9, 0.95, 0.95];
        }
        let rs = RegionSet::from_layout(&layout, &names, 1.0);
        let f = regional_intensities(&am, &rs);
        assert_eq!(&f[..2], &[0.75, 0.25]);

        let report = regional_report(&am, &rs, 0.8).unwrap();
        assert!((report.entries[0].regional_risk - 0.6).abs() < 1e-15);
        assert_eq!(report.entries[0].name, "region_01");
        assert!((report.entries[1].regional_risk - 0.2).abs() < 1e-15);

        // overlapping boxes double count
        layout[2] = [0.0, 0.0, 1.0, 1.0];
        let rs = RegionSet::from_layout(&layout, &names, 1.0);
        assert!(regional_intensities(&am, &rs).iter().sum::<f64>() > 1.0);
    }

    #[test]
    fn zero_map_keeps_name_order() {
        let names = RegionNames::default();
        let rs = RegionSet::from_layout(&partition(), &names, 1.0);
        let am = ActivationMap::new(8, 8, vec![0.0; 64]).unwrap();
        assert!(regional_intensities(&am, &rs).iter().all(|&f| f == 0.0));
        let report = regional_report(&am, &rs, 0.5).unwrap();
        for (i, e) in report.entries.iter().enumerate() {
            assert_eq!(e.name, names.get(i));
            assert_eq!(e.rank, i + 1);
            assert_eq!(e.regional_risk, 0.0);
        }
    }

    #[test]
    fn partition_conserves_global_risk() {
        let names = RegionNames::default();
        let rs = RegionSet::from_layout(&partition(), &names, 1.0);
        let values: Vec<f64> = (0..56 * 30).map(|i| ((i * 37) % 11) as f64).collect();
        let am = ActivationMap::new(30, 56, values).unwrap();
        let report = regional_report(&am, &rs, 0.745).unwrap();
        let total: f64 = report.entries.iter().map(|e| e.regional_risk).sum();
        assert!((total - 0.745).abs() <= 1e-9 * 0.745);
        assert!(report.entries.iter().all(|e| e.regional_risk <= 0.745));
    }

    #[test]
    fn top_k_bounds() {
        let names = RegionNames::default();
        let rs = RegionSet::from_layout(&partition(), &names, 1.0);
        let am = ActivationMap::new(4, 28, (0..112).map(|i| i as f64).collect()).unwrap();
        let report = regional_report(&am, &rs, 0.3).unwrap();
        assert_eq!(top_k(&report, 29).unwrap().len(), 29);
        assert_eq!(top_k(&report, 1).unwrap()[0].name, "region_29");
        assert!(top_k(&report, 0).is_err());
        assert!(top_k(&report, 30).is_err());
    }

    #[test]
    fn global_risk_must_be_a_probability() {
        let names = RegionNames::default();
        let rs = RegionSet::from_layout(&partition(), &names, 1.0);
        let am = ActivationMap::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(regional_report(&am, &rs, 1.0).is_err());
        assert!(regional_report(&am, &rs, 0.0).is_err());
    }
}
