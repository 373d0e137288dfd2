//! Region completer: a three-layer perceptron that regresses the coordinates
//! of masked regions from the visible ones.
//!
//! Input is the 116 coordinates with masked entries zeroed, followed by one
//! mask bit per region (1 = missing). Output is all 116 coordinates; only
//! the masked ones are trained and used.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BoxCoords, Layout, RegionBox, RegionSet, N_REGIONS};
use crate::error::{check_len, Error, Result};
use crate::survival::AdamW;

const N_COORDS: usize = N_REGIONS * 4;
const INPUT_DIM: usize = N_COORDS + N_REGIONS;

/// Smallest side length of a completed box.
const MIN_EXTENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleterConfig {
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-step masked fraction is drawn uniformly from `[low, high]`.
    pub mask_fraction_range: (f64, f64),
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CompleterConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            batch_size: 2000,
            learning_rate: 1e-3,
            mask_fraction_range: (0.1, 0.5),
            epochs: 100,
            seed: 0,
        }
    }
}

impl CompleterConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mask_fraction_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "mask_fraction_range must satisfy 0 < low <= high < 1, got ({lo}, {hi})"
            )));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "hidden_dim and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Parameters live in one flat buffer: W1, b1, W2, b2, W3, b3, with each
/// weight matrix stored `in × out` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleterNet {
    hidden_dim: usize,
    params: Vec<f64>,
}

struct Layer {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

impl CompleterNet {
    pub fn input_dim() -> usize {
        INPUT_DIM
    }

    pub fn output_dim() -> usize {
        N_COORDS
    }

    pub fn n_params(hidden_dim: usize) -> usize {
        INPUT_DIM * hidden_dim
            + hidden_dim
            + hidden_dim * hidden_dim
            + hidden_dim
            + hidden_dim * N_COORDS
            + N_COORDS
    }

    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            params: vec![0.0; Self::n_params(hidden_dim)],
        }
    }

    pub fn from_params(hidden_dim: usize, params: Vec<f64>) -> Result<Self> {
        check_len(Self::n_params(hidden_dim), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(
                "completer parameters must be finite".into(),
            ));
        }
        Ok(Self { hidden_dim, params })
    }

    /// He-normal weights, zero biases.
    pub fn initialized(hidden_dim: usize, seed: u64) -> Self {
        let mut net = Self::zeros(hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers() {
            let std = (2.0 / layer.rows as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut net.params[layer.w..layer.w + layer.rows * layer.cols] {
                *p = normal.sample(&mut rng);
            }
        }
        net
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layers(&self) -> [Layer; 3] {
        let h = self.hidden_dim;
        let dims = [(INPUT_DIM, h), (h, h), (h, N_COORDS)];
        let mut offset = 0;
        dims.map(|(rows, cols)| {
            let w = offset;
            let b = w + rows * cols;
            offset = b + cols;
            Layer { rows, cols, w, b }
        })
    }

    fn weight(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.rows, l.cols), &self.params[l.w..l.b]).expect("layer shape")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.b..l.b + l.cols])
    }

    /// Hidden activations and output for a batch of encoded inputs.
    fn forward_batch(&self, x: &Array2<f64>) -> [Array2<f64>; 3] {
        let [l1, l2, l3] = self.layers();
        let relu = |mut a: Array2<f64>| {
            a.mapv_inplace(|v| v.max(0.0));
            a
        };
        let h1 = relu(x.dot(&self.weight(&l1)) + self.bias(&l1));
        let h2 = relu(h1.dot(&self.weight(&l2)) + self.bias(&l2));
        let out = h2.dot(&self.weight(&l3)) + self.bias(&l3);
        [h1, h2, out]
    }

    /// Predicts all 116 coordinates from `coords` (masked entries should be
    /// zero) and the per-region mask.
    pub fn forward(&self, coords: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        check_len(N_COORDS, coords.len())?;
        check_len(N_REGIONS, mask.len())?;
        let x = Array2::from_shape_vec((1, INPUT_DIM), encode(coords, mask)).expect("input shape");
        let [_, _, out] = self.forward_batch(&x);
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Mean squared error over masked coordinates and its gradient with
    /// respect to every parameter (same layout as [`CompleterNet::params`]).
    pub fn masked_mse_and_grad(&self, batch: &MaskedBatch) -> (f64, Vec<f64>) {
        let [l1, l2, l3] = self.layers();
        let [h1, h2, out] = self.forward_batch(&batch.inputs);
        let n_masked = batch.coord_mask.sum().max(1.0);
        let diff = (&out - &batch.targets) * &batch.coord_mask;
        let loss = diff.mapv(|d| d * d).sum() / n_masked;

        let mut grad = vec![0.0; self.params.len()];
        let mut put = |l: &Layer, dw: Array2<f64>, db: Array1<f64>| {
            for (g, v) in grad[l.w..l.b].iter_mut().zip(dw.iter()) {
                *g = *v;
            }
            for (g, v) in grad[l.b..l.b + l.cols].iter_mut().zip(db.iter()) {
                *g = *v;
            }
        };

        let d_out = diff * (2.0 / n_masked);
        put(&l3, h2.t().dot(&d_out), d_out.sum_axis(Axis(0)));

        let mut d_h2 = d_out.dot(&self.weight(&l3).t());
        d_h2.zip_mut_with(&h2, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        put(&l2, h1.t().dot(&d_h2), d_h2.sum_axis(Axis(0)));

        let mut d_h1 = d_h2.dot(&self.weight(&l2).t());
        d_h1.zip_mut_with(&h1, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        put(&l1, batch.inputs.t().dot(&d_h1), d_h1.sum_axis(Axis(0)));

        (loss, grad)
    }
}

fn encode(coords: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut x = Vec::with_capacity(INPUT_DIM);
    for (r, c) in coords.chunks_exact(4).enumerate() {
        if mask[r] {
            x.extend_from_slice(&[0.0; 4]);
        } else {
            x.extend_from_slice(c);
        }
    }
    x.extend(mask.iter().map(|&m| f64::from(u8::from(m))));
    x
}

/// Encoded inputs, full targets and the per-coordinate loss mask.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    coord_mask: Array2<f64>,
}

impl MaskedBatch {
    pub fn new(layouts: &[&Layout], masks: &[Vec<bool>]) -> Result<Self> {
        check_len(layouts.len(), masks.len())?;
        let n = layouts.len();
        let mut inputs = Array2::zeros((n, INPUT_DIM));
        let mut targets = Array2::zeros((n, N_COORDS));
        let mut coord_mask = Array2::zeros((n, N_COORDS));
        for (row, (layout, mask)) in layouts.iter().zip(masks).enumerate() {
            check_len(N_REGIONS, mask.len())?;
            let flat: Vec<f64> = layout.iter().flatten().copied().collect();
            inputs
                .row_mut(row)
                .assign(&ArrayView1::from(&encode(&flat, mask)[..]));
            targets.row_mut(row).assign(&ArrayView1::from(&flat[..]));
            for (r, &m) in mask.iter().enumerate() {
                if m {
                    coord_mask.slice_mut(s![row, 4 * r..4 * r + 4]).fill(1.0);
                }
            }
        }
        Ok(Self {
            inputs,
            targets,
            coord_mask,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompleterFit {
    pub net: CompleterNet,
    /// Masked MSE of every optimizer step.
    pub losses: Vec<f64>,
}

/// Masked-regression training: each step masks a random subset of regions
/// in every layout of the batch and fits their coordinates.
pub fn completer_train(layouts: &[Layout], cfg: &CompleterConfig) -> Result<CompleterFit> {
    cfg.validate()?;
    if layouts.is_empty() {
        return Err(Error::InvalidInput(
            "completer needs at least one layout".into(),
        ));
    }
    if layouts
        .iter()
        .flatten()
        .flatten()
        .any(|c| !(0.0..=1.0).contains(c))
    {
        return Err(Error::InvalidInput(
            "layout coordinates must lie in [0, 1]".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CompleterNet::initialized(cfg.hidden_dim, rng.random());
    let mut adam = AdamW::with(net.params.len(), cfg.learning_rate, 0.0, 0.9, 0.999, 1e-8);
    let (lo, hi) = cfg.mask_fraction_range;
    let batch_size = cfg.batch_size.min(layouts.len());
    let mut order: Vec<usize> = (0..layouts.len()).collect();
    let mut regions: Vec<usize> = (0..N_REGIONS).collect();
    let mut losses = Vec::new();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let fraction = rng.random_range(lo..=hi);
            let k = ((fraction * N_REGIONS as f64).round() as usize).clamp(1, N_REGIONS - 1);
            let batch_layouts: Vec<&Layout> = chunk.iter().map(|&i| &layouts[i]).collect();
            let masks: Vec<Vec<bool>> = chunk
                .iter()
                .map(|_| {
                    regions.shuffle(&mut rng);
                    let mut m = vec![false; N_REGIONS];
                    for &r in &regions[..k] {
                        m[r] = true;
                    }
                    m
                })
                .collect();
            let batch = MaskedBatch::new(&batch_layouts, &masks)?;
            let (loss, grad) = net.masked_mse_and_grad(&batch);
            adam.step(&mut net.params, &grad);
            losses.push(loss);
        }
    }
    Ok(CompleterFit { net, losses })
}

/// Result of [`complete`]. `low_confidence` is set when no region was
/// detected, so the prediction had no anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub regions: RegionSet,
    pub low_confidence: bool,
}

fn normalize_interval(a: f64, b: f64) -> (f64, f64) {
    let (lo, hi) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    if hi - lo >= MIN_EXTENT {
        return (lo, hi);
    }
    let half = MIN_EXTENT / 2.0;
    let center = ((lo + hi) / 2.0).clamp(half, 1.0 - half);
    (center - half, center + half)
}

fn normalize_box(raw: &[f64]) -> BoxCoords {
    let (x1, x2) = normalize_interval(raw[0], raw[2]);
    let (y1, y2) = normalize_interval(raw[1], raw[3]);
    [x1, y1, x2, y2]
}

/// Fills every undetected box with the completer's prediction. Detected
/// boxes are passed through untouched.
pub fn complete(rs: &RegionSet, net: &CompleterNet) -> Result<Completion> {
    check_len(N_REGIONS, rs.boxes.len())?;
    let mask: Vec<bool> = rs.boxes.iter().map(|b| !b.detected).collect();
    let low_confidence = mask.iter().all(|&m| m);
    if !mask.iter().any(|&m| m) {
        return Ok(Completion {
            regions: rs.clone(),
            low_confidence,
        });
    }
    let coords: Vec<f64> = rs.boxes.iter().flat_map(RegionBox::coords).collect();
    let predicted = net.forward(&coords, &mask)?;
    let boxes = rs
        .boxes
        .iter()
        .zip(predicted.chunks_exact(4))
        .map(|(b, p)| {
            if b.detected {
                return b.clone();
            }
            let [x1, y1, x2, y2] = normalize_box(p);
            RegionBox {
                name: b.name.clone(),
                x1,
                y1,
                x2,
                y2,
                detected: false,
                score: None,
                completed: true,
            }
        })
        .collect();
    Ok(Completion {
        regions: RegionSet { boxes },
        low_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{iou, RegionNames};
    use crate::survival::finite_difference_gradient;

    fn grid_layout(shift: f64) -> Layout {
        std::array::from_fn(|r| {
            let (row, col) = ((r / 6) as f64, (r % 6) as f64);
            [
                0.02 + col * 0.16 + shift,
                0.02 + row * 0.19,
                0.14 + col * 0.16 + shift,
                0.18 + row * 0.19,
            ]
        })
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = CompleterNet::zeros(16);
        let out = net.forward(&[0.3; N_COORDS], &[false; N_REGIONS]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let net = CompleterNet::zeros(4);
        assert!(net.forward(&[0.0; 10], &[false; N_REGIONS]).is_err());
        assert!(net.forward(&[0.0; N_COORDS], &[false; 3]).is_err());
    }

    #[test]
    fn forward_is_lipschitz() {
        let net = CompleterNet::initialized(32, 9);
        // product of Frobenius norms bounds the operator norm of the chain
        let bound: f64 = net
            .layers()
            .iter()
            .map(|l| net.weight(l).iter().map(|w| w * w).sum::<f64>().sqrt())
            .product();
        let layout = grid_layout(0.0);
        let mut coords: Vec<f64> = layout.iter().flatten().copied().collect();
        let mask = [false; N_REGIONS];
        let a = net.forward(&coords, &mask).unwrap();
        let eps = 1e-3;
        coords[17] += eps;
        let b = net.forward(&coords, &mask).unwrap();
        let dist = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= bound * eps + 1e-12);
    }

    #[test]
    fn masked_mse_gradient_matches_finite_differences() {
        let net = CompleterNet::initialized(8, 3);
        let layouts = [grid_layout(0.0), grid_layout(0.01), grid_layout(-0.01)];
        let refs: Vec<&Layout> = layouts.iter().collect();
        let masks: Vec<Vec<bool>> = (0..3)
            .map(|i| (0..N_REGIONS).map(|r| (r + i) % 4 == 0).collect())
            .collect();
        let batch = MaskedBatch::new(&refs, &masks).unwrap();
        let (_, analytic) = net.masked_mse_and_grad(&batch);
        let numeric = finite_difference_gradient(
            |p| {
                CompleterNet::from_params(8, p.to_vec())
                    .unwrap()
                    .masked_mse_and_grad(&batch)
                    .0
            },
            net.params(),
            1e-6,
        );
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = CompleterConfig {
            hidden_dim: 8,
            epochs: 0,
            seed: 5,
            ..CompleterConfig::default()
        };
        let fit = completer_train(&[grid_layout(0.0)], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(fit.net, CompleterNet::initialized(8, rng.random()));
        assert!(fit.losses.is_empty());
    }

    #[test]
    fn empty_layouts_rejected() {
        assert!(completer_train(&[], &CompleterConfig::default()).is_err());
        let bad = CompleterConfig {
            mask_fraction_range: (0.6, 0.2),
            ..CompleterConfig::default()
        };
        assert!(completer_train(&[grid_layout(0.0)], &bad).is_err());
    }

    #[test]
    fn memorizes_single_layout() {
        let cfg = CompleterConfig {
            hidden_dim: 32,
            batch_size: 1,
            learning_rate: 1e-3,
            mask_fraction_range: (0.01, 0.02),
            epochs: 1500,
            seed: 1,
        };
        let layout = grid_layout(0.0);
        let fit = completer_train(&[layout], &cfg).unwrap();
        let tail = &fit.losses[fit.losses.len() - 50..];
        let mean_tail = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean_tail < 1e-4, "tail loss {mean_tail}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let layouts: Vec<Layout> = (0..10).map(|i| grid_layout(i as f64 * 0.002)).collect();
        let cfg = CompleterConfig {
            hidden_dim: 16,
            batch_size: 4,
            epochs: 3,
            seed: 11,
            ..CompleterConfig::default()
        };
        let a = completer_train(&layouts, &cfg).unwrap();
        let b = completer_train(&layouts, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn complete_passes_detected_boxes_through() {
        let names = RegionNames::default();
        let rs = RegionSet::from_layout(&grid_layout(0.0), &names, 0.9);
        let net = CompleterNet::initialized(8, 0);
        let out = complete(&rs, &net).unwrap();
        assert_eq!(out.regions, rs);
        assert!(!out.low_confidence);
    }

    #[test]
    fn complete_fixes_inverted_and_degenerate_predictions() {
        assert_eq!(normalize_box(&[0.6, 0.2, 0.4, 0.5]), [0.4, 0.2, 0.6, 0.5]);
        let b = normalize_box(&[1.3, -0.2, 1.1, 0.5]);
        assert!(b[0] < b[2] && b[2] <= 1.0 && b[0] >= 0.0);
        assert_eq!(&b[1..2], &[0.0]);
    }

    #[test]
    fn all_undetected_is_low_confidence() {
        let names = RegionNames::default();
        let rs = RegionSet {
            boxes: names
                .as_slice()
                .iter()
                .map(|n| RegionBox::undetected(n.clone()))
                .collect(),
        };
        let out = complete(&rs, &CompleterNet::initialized(8, 0)).unwrap();
        assert!(out.low_confidence);
        assert!(out.regions.all_usable());
        out.regions.validate(&names).unwrap();
    }

    #[test]
    fn trained_net_recovers_masked_region() {
        let layouts: Vec<Layout> = (0..64)
            .map(|i| grid_layout((i % 8) as f64 * 0.004 - 0.016))
            .collect();
        let cfg = CompleterConfig {
            hidden_dim: 32,
            batch_size: 64,
            epochs: 600,
            seed: 2,
            ..CompleterConfig::default()
        };
        let fit = completer_train(&layouts, &cfg).unwrap();
        let names = RegionNames::default();
        let truth = grid_layout(0.006);
        let mut rs = RegionSet::from_layout(&truth, &names, 1.0);
        rs.boxes[10] = RegionBox::undetected(names.get(10));
        let out = complete(&rs, &fit.net).unwrap();
        assert!(iou(&out.regions.boxes[10].coords(), &truth[10]) >= 0.5);
        for (a, b) in out.regions.boxes.iter().zip(&rs.boxes) {
            if b.detected {
                assert_eq!(a, b);
            }
        }
    }
}
