//! Deterministic inputs shared by the benchmarks.

use survcam_core::region::{Layout, RegionNames};
use survcam_core::survival::{avg_pool, SurvivalRecord};
use survcam_core::synth::{gen_cohort, gen_layouts, SynthConfig, SynthSubject};

pub fn cohort(n: usize, size: usize) -> Vec<SynthSubject> {
    let cfg = SynthConfig {
        n_subjects: n,
        height: size,
        width: size,
        seed: 17,
        ..SynthConfig::default()
    };
    gen_cohort(&cfg, &RegionNames::default()).expect("valid config")
}

/// Pooled features, risk scores (true log hazard) and labels.
pub fn scored(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<SurvivalRecord>) {
    let subjects = cohort(n, 8);
    let pooled = subjects.iter().map(|s| avg_pool(&s.feature_map)).collect();
    let eta = subjects.iter().map(|s| s.eta).collect();
    let records = subjects.into_iter().map(|s| s.record).collect();
    (pooled, eta, records)
}

pub fn layouts(n: usize) -> Vec<Layout> {
    gen_layouts(n, 0.02, 17)
}
