//! Synthetic cohorts with known ground truth.
//!
//! Every subject gets a jittered copy of a fixed 29-box template, a feature
//! map of rectified Gaussian noise with one Gaussian "lesion" bump inside a
//! chosen region on a designated channel, and an exponential survival time
//! whose log-hazard is linear in the pooled features.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{Layout, RegionBox, RegionNames, RegionSet, N_REGIONS};
use crate::survival::{avg_pool, FeatureMap, SurvivalRecord};

/// Layout jitter above this is clamped.
pub const MAX_JITTER: f64 = 0.1;

/// Lesion peak height in units of the background noise std.
pub const LESION_PEAK: f64 = 5.0;

const LAYOUT_SALT: u64 = 0x6c61_796f_7574;
const COHORT_SALT: u64 = 0x636f_686f_7274;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub lesion_channel: usize,
    /// Fixed lesion region, or a uniformly random one per subject.
    pub lesion_region: Option<usize>,
    pub true_weights: Vec<f64>,
    pub baseline_hazard: f64,
    pub censor_rate: f64,
    pub layout_jitter: f64,
    pub noise_std: f64,
    /// Regions per subject marked undetected.
    pub dropout_regions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            channels: 4,
            height: 32,
            width: 32,
            lesion_channel: 0,
            lesion_region: None,
            true_weights: vec![120.0, 0.0, 0.0, 0.0],
            baseline_hazard: 0.3,
            censor_rate: 0.2,
            layout_jitter: 0.02,
            noise_std: 1.0,
            dropout_regions: 0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("channels, height and width must be >= 1");
        }
        if self.true_weights.len() != self.channels {
            return bad("true_weights must have one entry per channel");
        }
        if self.lesion_channel >= self.channels {
            return bad("lesion_channel out of range");
        }
        if self.lesion_region.is_some_and(|r| r >= N_REGIONS) {
            return bad("lesion_region must be in 0..29");
        }
        if self.baseline_hazard.is_nan() || self.baseline_hazard <= 0.0 {
            return bad("baseline_hazard must be > 0");
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad("censor_rate must lie in [0, 1)");
        }
        if self.layout_jitter.is_nan()
            || self.layout_jitter < 0.0
            || self.noise_std.is_nan()
            || self.noise_std <= 0.0
        {
            return bad("layout_jitter must be >= 0 and noise_std > 0");
        }
        if self.dropout_regions > N_REGIONS {
            return bad("dropout_regions must be <= 29");
        }
        Ok(())
    }
}

/// Five horizontal bands tiling the unit square: an apex band of five
/// boxes above four bands of six (three zones per side). Areas stay within
/// 20% of each other so no region dominates by size alone.
pub fn template_layout() -> Layout {
    let mut boxes: Vec<[f64; 4]> = Vec::with_capacity(N_REGIONS);
    for band in 0..5 {
        let (y1, y2) = (band as f64 * 0.2, (band + 1) as f64 * 0.2);
        let n = if band == 0 { 5 } else { 6 };
        for k in 0..n {
            boxes.push([k as f64 / n as f64, y1, (k + 1) as f64 / n as f64, y2]);
        }
    }
    boxes.try_into().expect("template has 29 boxes")
}

fn effective_jitter(jitter: f64) -> f64 {
    if jitter > MAX_JITTER {
        log::warn!("layout jitter {jitter} clamped to {MAX_JITTER}");
        MAX_JITTER
    } else {
        jitter.max(0.0)
    }
}

fn jittered_layout(rng: &mut ChaCha8Rng, jitter: f64) -> Layout {
    let template = template_layout();
    if jitter == 0.0 {
        return template;
    }
    let normal = Normal::new(0.0, jitter).expect("finite jitter");
    let per_box = Normal::new(0.0, jitter / 4.0).expect("finite jitter");
    let (dx, dy) = (normal.sample(rng), normal.sample(rng));
    let (sx, sy) = (1.0 + normal.sample(rng), 1.0 + normal.sample(rng));
    template.map(|[x1, y1, x2, y2]| {
        let mut c = [
            0.5 + sx * (x1 - 0.5) + dx + per_box.sample(rng),
            0.5 + sy * (y1 - 0.5) + dy + per_box.sample(rng),
            0.5 + sx * (x2 - 0.5) + dx + per_box.sample(rng),
            0.5 + sy * (y2 - 0.5) + dy + per_box.sample(rng),
        ];
        for v in &mut c {
            *v = v.clamp(0.0, 1.0);
        }
        for axis in 0..2 {
            let (lo, hi) = (c[axis].min(c[axis + 2]), c[axis].max(c[axis + 2]));
            let hi = if hi - lo < 1e-3 {
                (lo + 1e-3).min(1.0)
            } else {
                hi
            };
            let lo = lo.min(hi - 1e-3);
            c[axis] = lo;
            c[axis + 2] = hi;
        }
        c
    })
}

/// `n` jittered copies of the template: a shared shift and scale per layout
/// plus independent noise on every coordinate.
pub fn gen_layouts(n: usize, jitter: f64, seed: u64) -> Vec<Layout> {
    let jitter = effective_jitter(jitter);
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LAYOUT_SALT);
            rng.set_stream(i as u64);
            jittered_layout(&mut rng, jitter)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub feature_map: FeatureMap,
    /// Detector view of the layout, with dropped regions undetected.
    pub regions: RegionSet,
    /// The full layout the regions were drawn from.
    pub layout: Layout,
    pub record: SurvivalRecord,
    /// Centered linear predictor (true log relative hazard).
    pub eta: f64,
    pub lesion_region: usize,
}

pub fn subject_id(index: usize) -> String {
    format!("subj_{index:05}")
}

fn plant_lesion(values: &mut [f32], cfg: &SynthConfig, region: &[f64; 4], severity: f64) {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let [x1, y1, x2, y2] = *region;
    let cx = (x1 + x2) / 2.0 * w - 0.5;
    let cy = (y1 + y2) / 2.0 * h - 0.5;
    let side = ((x2 - x1) * w).min((y2 - y1) * h);
    let spread = (0.2 + 0.25 * severity) * side;
    let peak = LESION_PEAK * cfg.noise_std;
    let plane = cfg.height * cfg.width;
    let channel = &mut values[cfg.lesion_channel * plane..(cfg.lesion_channel + 1) * plane];
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            if d2 <= 9.0 * spread * spread {
                channel[i * cfg.width + j] += (peak * (-d2 / (2.0 * spread * spread)).exp()) as f32;
            }
        }
    }
}

/// Censoring rate `λc` whose expected censored fraction over the cohort is
/// `target`, found by bisection in log space.
fn censoring_rate(hazards: &[f64], target: f64) -> f64 {
    let fraction =
        |rate: f64| hazards.iter().map(|h| rate / (rate + h)).sum::<f64>() / hazards.len() as f64;
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if fraction(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ((lo + hi) / 2.0).exp()
}

/// Generates a full cohort. Subject `i` draws from its own stream of the
/// seeded generator, so any subject can be regenerated independently.
pub fn gen_cohort(cfg: &SynthConfig, names: &RegionNames) -> Result<Vec<SynthSubject>> {
    cfg.validate()?;
    let jitter = effective_jitter(cfg.layout_jitter);
    let noise = Normal::new(0.0, cfg.noise_std).expect("positive std");

    struct Draft {
        fm: FeatureMap,
        layout: Layout,
        lesion: usize,
        linear: f64,
        rng: ChaCha8Rng,
    }

    let mut drafts = Vec::with_capacity(cfg.n_subjects);
    for s in 0..cfg.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ COHORT_SALT);
        rng.set_stream(s as u64);
        let layout = jittered_layout(&mut rng, jitter);
        let lesion = cfg
            .lesion_region
            .unwrap_or_else(|| rng.random_range(0..N_REGIONS));
        let severity: f64 = rng.random();
        let mut values: Vec<f32> = (0..cfg.channels * cfg.height * cfg.width)
            .map(|_| noise.sample(&mut rng).max(0.0) as f32)
            .collect();
        plant_lesion(&mut values, cfg, &layout[lesion], severity);
        let fm = FeatureMap::new(cfg.channels, cfg.height, cfg.width, values)?;
        let linear = cfg
            .true_weights
            .iter()
            .zip(avg_pool(&fm))
            .map(|(w, x)| w * x)
            .sum();
        drafts.push(Draft {
            fm,
            layout,
            lesion,
            linear,
            rng,
        });
    }

    let mean = drafts.iter().map(|d| d.linear).sum::<f64>() / drafts.len().max(1) as f64;
    let hazards: Vec<f64> = drafts
        .iter()
        .map(|d| cfg.baseline_hazard * (d.linear - mean).exp())
        .collect();
    let censor = (cfg.censor_rate > 0.0).then(|| censoring_rate(&hazards, cfg.censor_rate));

    drafts
        .into_iter()
        .zip(hazards)
        .enumerate()
        .map(|(s, (mut d, hazard))| {
            let u: f64 = d.rng.sample(Open01);
            let event_time = -u.ln() / hazard;
            let (time, event) = match censor {
                Some(rate) => {
                    let v: f64 = d.rng.sample(Open01);
                    let censor_time = -v.ln() / rate;
                    if censor_time < event_time {
                        (censor_time, false)
                    } else {
                        (event_time, true)
                    }
                }
                None => (event_time, true),
            };
            let mut regions = RegionSet::from_layout(&d.layout, names, 1.0);
            let mut order: Vec<usize> = (0..N_REGIONS).collect();
            for k in 0..cfg.dropout_regions {
                let pick = d.rng.random_range(k..N_REGIONS);
                order.swap(k, pick);
                regions.boxes[order[k]] = RegionBox::undetected(names.get(order[k]));
            }
            Ok(SynthSubject {
                feature_map: d.fm,
                regions,
                layout: d.layout,
                record: SurvivalRecord::new(subject_id(s), time, event)?,
                eta: d.linear - mean,
                lesion_region: d.lesion,
            })
        })
        .collect()
}
