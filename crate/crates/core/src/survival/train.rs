use serde::{Deserialize, Serialize};

use super::{cox_loss, cox_loss_gradient, event_count, sigmoid, RiskHead, RiskSet, SurvivalRecord};
use crate::error::{check_len, Error, Result};

/// Optimizer settings for [`fit`]. AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub risk_set_inclusive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 200,
            seed: 0,
            risk_set_inclusive: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput(
                "moment decays must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn risk_set(&self) -> RiskSet {
        RiskSet::from_inclusive(self.risk_set_inclusive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Parameters of the epoch with the lowest selection loss (validation
    /// loss when a validation set was given, training loss otherwise).
    pub head: RiskHead,
    pub best_epoch: usize,
    /// Epoch 0 is the initialization.
    pub trace: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// A cohort of pooled feature vectors with their survival labels.
#[derive(Debug, Clone, Copy)]
pub struct Cohort<'a> {
    pub features: &'a [Vec<f64>],
    pub records: &'a [SurvivalRecord],
}

impl<'a> Cohort<'a> {
    pub fn new(features: &'a [Vec<f64>], records: &'a [SurvivalRecord]) -> Result<Self> {
        check_len(features.len(), records.len())?;
        Ok(Self { features, records })
    }

    fn risks(&self, head: &RiskHead) -> Result<Vec<f64>> {
        self.features
            .iter()
            .map(|x| head.logit(x).map(sigmoid))
            .collect()
    }

    fn loss(&self, head: &RiskHead, rule: RiskSet) -> Result<f64> {
        cox_loss(&self.risks(head)?, self.records, rule)
    }

    /// Gradient of the Cox loss with respect to (weights, bias).
    fn param_gradient(&self, head: &RiskHead, rule: RiskSet) -> Result<(Vec<f64>, f64)> {
        let risks = self.risks(head)?;
        let d_risk = cox_loss_gradient(&risks, self.records, rule)?;
        let mut gw = vec![0.0; head.channels()];
        let mut gb = 0.0;
        for ((x, r), g) in self.features.iter().zip(&risks).zip(&d_risk) {
            let dz = g * r * (1.0 - r);
            gb += dz;
            for (acc, xi) in gw.iter_mut().zip(x) {
                *acc += dz * xi;
            }
        }
        Ok((gw, gb))
    }
}

/// Trains a zero-initialized [`RiskHead`] on the full-batch Cox loss and
/// returns the parameters of the lowest-loss epoch.
pub fn fit(
    features: &[Vec<f64>],
    records: &[SurvivalRecord],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    fit_with_validation(Cohort::new(features, records)?, None, cfg)
}

/// Like [`fit`], but selects the epoch by validation loss when `validation`
/// holds at least one event.
pub fn fit_with_validation(
    train: Cohort<'_>,
    validation: Option<Cohort<'_>>,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.features.len() < 2 {
        return Err(Error::InvalidInput(
            "fit needs at least two subjects".into(),
        ));
    }
    if event_count(train.records) == 0 {
        return Err(Error::NoEvents);
    }
    let dim = train.features[0].len();
    for x in train.features {
        check_len(dim, x.len())?;
    }

    let mut warnings = Vec::new();
    if train.features.iter().all(|x| x == &train.features[0]) {
        warnings.push("non-separable: all training feature vectors are identical".to_string());
    }
    let validation = match validation {
        Some(v) if event_count(v.records) > 0 => Some(v),
        Some(_) => {
            warnings.push("validation split has no events; selecting on training loss".into());
            None
        }
        None => None,
    };

    let rule = cfg.risk_set();
    let mut head = RiskHead::zeros(dim);
    let mut adam = AdamW::new(dim + 1, cfg);

    let evaluate = |head: &RiskHead, epoch: usize| -> Result<EpochStats> {
        Ok(EpochStats {
            epoch,
            train_loss: train.loss(head, rule)?,
            val_loss: validation.map(|v| v.loss(head, rule)).transpose()?,
        })
    };
    let selection = |s: &EpochStats| s.val_loss.unwrap_or(s.train_loss);

    let mut trace = vec![evaluate(&head, 0)?];
    let mut best = (selection(&trace[0]), 0, head.clone());

    for epoch in 1..=cfg.max_epochs {
        let (gw, gb) = train.param_gradient(&head, rule)?;
        let mut params: Vec<f64> = head.weights.iter().copied().chain([head.bias]).collect();
        let grads: Vec<f64> = gw.into_iter().chain([gb]).collect();
        adam.step(&mut params, &grads);
        head.bias = params.pop().unwrap_or_default();
        head.weights = params;

        let stats = evaluate(&head, epoch)?;
        let score = selection(&stats);
        if score < best.0 {
            best = (score, epoch, head.clone());
        }
        trace.push(stats);
    }

    Ok(FitResult {
        head: best.2,
        best_epoch: best.1,
        trace,
        warnings,
    })
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub(crate) struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub(crate) fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        Self::with(
            n_params,
            cfg.learning_rate,
            cfg.weight_decay,
            cfg.beta1,
            cfg.beta2,
            cfg.epsilon,
        )
    }

    pub(crate) fn with(
        n_params: usize,
        lr: f64,
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            *p -= self.lr * (update + self.weight_decay * *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::finite_difference_gradient;

    fn toy() -> (Vec<Vec<f64>>, Vec<SurvivalRecord>) {
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 / 12.0, ((i * 7) % 5) as f64 / 5.0])
            .collect();
        let recs = (0..12)
            .map(|i| SurvivalRecord::event_at(20.0 - i as f64, i % 3 != 0))
            .collect();
        (xs, recs)
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (xs, recs) = toy();
        let cohort = Cohort::new(&xs, &recs).unwrap();
        let head = RiskHead::new(vec![0.7, -1.3], 0.2).unwrap();
        let (gw, gb) = cohort.param_gradient(&head, RiskSet::Inclusive).unwrap();
        let numeric = finite_difference_gradient(
            |p| {
                let h = RiskHead::new(p[..2].to_vec(), p[2]).unwrap();
                cohort.loss(&h, RiskSet::Inclusive).unwrap()
            },
            &[0.7, -1.3, 0.2],
            1e-6,
        );
        for (a, n) in gw.iter().chain([&gb]).zip(&numeric) {
            assert!((a - n).abs() < 1e-8, "{a} vs {n}");
        }
    }

    #[test]
    fn zero_learning_rate_returns_initialization() {
        let (xs, recs) = toy();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let out = fit(&xs, &recs, &cfg).unwrap();
        assert_eq!(out.head, RiskHead::zeros(2));
        assert_eq!(out.trace.len(), 6);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (xs, recs) = toy();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let out = fit(&xs, &recs, &cfg).unwrap();
        assert_eq!(out.head, RiskHead::zeros(2));
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (xs, recs) = toy();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 100,
            ..TrainConfig::default()
        };
        let a = fit(&xs, &recs, &cfg).unwrap();
        let b = fit(&xs, &recs, &cfg).unwrap();
        assert_eq!(a.head, b.head);
        assert!(a.trace[a.best_epoch].train_loss < a.trace[0].train_loss);
        let mut best = f64::INFINITY;
        for s in &a.trace {
            best = best.min(s.train_loss);
        }
        assert_eq!(best, a.trace[a.best_epoch].train_loss);
    }

    #[test]
    fn permuted_cohort_gives_same_head() {
        let (xs, recs) = toy();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let a = fit(&xs, &recs, &cfg).unwrap();
        let xs_rev: Vec<_> = xs.iter().rev().cloned().collect();
        let recs_rev: Vec<_> = recs.iter().rev().cloned().collect();
        let b = fit(&xs_rev, &recs_rev, &cfg).unwrap();
        for (wa, wb) in a.head.weights.iter().zip(&b.head.weights) {
            assert!((wa - wb).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_features_flag_non_separable() {
        let xs = vec![vec![1.0, 2.0]; 4];
        let recs: Vec<_> = (1..=4)
            .map(|t| SurvivalRecord::event_at(t as f64, true))
            .collect();
        let out = fit(&xs, &recs, &TrainConfig::default()).unwrap();
        assert!(out.warnings.iter().any(|w| w.contains("non-separable")));
    }

    #[test]
    fn rejects_cohorts_without_events() {
        let xs = vec![vec![1.0], vec![2.0]];
        let recs = vec![
            SurvivalRecord::event_at(1.0, false),
            SurvivalRecord::event_at(2.0, false),
        ];
        assert_eq!(
            fit(&xs, &recs, &TrainConfig::default()).unwrap_err(),
            Error::NoEvents
        );
    }
}
