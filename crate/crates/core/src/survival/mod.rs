//! Survival data types, the sigmoid risk head and the Cox partial-likelihood
//! objective used to train it.

mod cox;
mod fd;
mod train;

pub use cox::{cox_loss, cox_loss_gradient, RiskSet};
pub use fd::finite_difference_gradient;
pub(crate) use train::AdamW;
pub use train::{fit, fit_with_validation, Cohort, EpochStats, FitResult, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// One subject's follow-up: time in days and whether death was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub subject_id: String,
    pub time_days: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(subject_id: impl Into<String>, time_days: f64, event: bool) -> Result<Self> {
        if !time_days.is_finite() || time_days <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "time_days must be finite and > 0, got {time_days}"
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            time_days,
            event,
        })
    }

    /// Unvalidated constructor for tests and generators that already
    /// guarantee a positive time.
    pub fn event_at(time_days: f64, event: bool) -> Self {
        Self {
            subject_id: String::new(),
            time_days,
            event,
        }
    }
}

/// Number of records with an observed event.
pub fn event_count(records: &[SurvivalRecord]) -> usize {
    records.iter().filter(|r| r.event).count()
}

/// A C×H×W activation tensor, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "feature map dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        check_len(channels * height * width, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "feature map has non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.values[(c * self.height + i) * self.width + j]
    }

    /// One channel as a row-major H×W slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }
}

/// Spatial average of every channel.
pub fn avg_pool(fm: &FeatureMap) -> Vec<f64> {
    let area = (fm.height * fm.width) as f64;
    (0..fm.channels)
        .map(|c| fm.channel(c).iter().map(|&v| v as f64).sum::<f64>() / area)
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Linear layer followed by a sigmoid: the scalar risk predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RiskHead {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput(
                "risk head needs at least one weight".into(),
            ));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(
                "risk head parameters must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels],
            bias: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    /// Pre-activation `wᵀx + b`.
    pub fn logit(&self, pooled: &[f64]) -> Result<f64> {
        check_len(self.weights.len(), pooled.len())?;
        Ok(self
            .weights
            .iter()
            .zip(pooled)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias)
    }
}

/// `σ(wᵀ·pooled + b)`.
pub fn predict_risk(head: &RiskHead, pooled: &[f64]) -> Result<f64> {
    head.logit(pooled).map(sigmoid)
}
