//! Risk-specific Grad-CAM.
//!
//! The head is `σ(wᵀ·avgpool(f) + b)`, so the gradient of the risk with
//! respect to every pixel of channel `c` is the same value
//! `σ'(z)·w_c/(H·W)`. Pooling it over the map gives the channel weights and
//! the map is the ReLU of the weighted channel sum.

use crate::error::{check_len, Error, Result};
use crate::survival::{avg_pool, sigmoid, FeatureMap, RiskHead};

/// Non-negative H×W map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(
                "activation map dims must be >= 1".into(),
            ));
        }
        check_len(height * width, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "activation map values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Min-max scaled copy in `[0, 1]`; a constant map scales to zeros.
    pub fn min_max_normalized(&self) -> Vec<f64> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        if span <= 0.0 {
            return vec![0.0; self.values.len()];
        }
        self.values.iter().map(|v| (v - lo) / span).collect()
    }

    /// 8-bit grayscale after min-max normalization.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.min_max_normalized()
            .into_iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Pooled gradients `α_c` and the normalizer `Z` they were divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    pub alpha: Vec<f64>,
    pub normalizer: f64,
}

/// `∂σ(z)/∂f_c(i,j)` for every pixel, laid out like the feature map.
pub fn head_feature_gradient(head: &RiskHead, fm: &FeatureMap) -> Result<Vec<f64>> {
    check_len(head.channels(), fm.channels())?;
    let risk = sigmoid(head.logit(&avg_pool(fm))?);
    let plane = fm.height() * fm.width();
    let scale = risk * (1.0 - risk) / plane as f64;
    Ok(head
        .weights
        .iter()
        .flat_map(|w| std::iter::repeat_n(scale * w, plane))
        .collect())
}

/// `α_c = (1/Z) Σ_{i,j} grads[c,i,j]`.
pub fn channel_weights(grads: &[f64], channels: usize, normalizer: f64) -> Result<ChannelWeights> {
    if channels == 0 || !grads.len().is_multiple_of(channels) {
        return Err(Error::InvalidInput(format!(
            "{} gradient values do not split into {channels} channels",
            grads.len()
        )));
    }
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "normalizer must be > 0, got {normalizer}"
        )));
    }
    let plane = grads.len() / channels;
    let alpha = grads
        .chunks_exact(plane)
        .map(|g| g.iter().sum::<f64>() / normalizer)
        .collect();
    Ok(ChannelWeights { alpha, normalizer })
}

/// `ReLU(Σ_c α_c f_c)` for precomputed channel weights.
pub fn weighted_cam(fm: &FeatureMap, weights: &ChannelWeights) -> Result<ActivationMap> {
    check_len(fm.channels(), weights.alpha.len())?;
    let plane = fm.height() * fm.width();
    let mut acc = vec![0.0f64; plane];
    for (c, &a) in weights.alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (dst, &v) in acc.iter_mut().zip(fm.channel(c)) {
            *dst += a * v as f64;
        }
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    ActivationMap::new(fm.height(), fm.width(), acc)
}

/// Risk-specific Grad-CAM at feature-map resolution, with `Z = H·W`.
pub fn risk_cam(fm: &FeatureMap, head: &RiskHead) -> Result<ActivationMap> {
    let grads = head_feature_gradient(head, fm)?;
    let weights = channel_weights(&grads, fm.channels(), (fm.height() * fm.width()) as f64)?;
    weighted_cam(fm, &weights)
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners.
pub fn upsample_bilinear(am: &ActivationMap, out_h: usize, out_w: usize) -> Result<ActivationMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("output dims must be >= 1".into()));
    }
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = if n_out > 1 {
                    o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                } else {
                    0.0
                };
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = coords(am.height, out_h);
    let cols = coords(am.width, out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = am.get(r0, c0) * (1.0 - fx) + am.get(r0, c1) * fx;
            let bottom = am.get(r1, c0) * (1.0 - fx) + am.get(r1, c1) * fx;
            values.push((top * (1.0 - fy) + bottom * fy).max(0.0));
        }
    }
    ActivationMap::new(out_h, out_w, values)
}
