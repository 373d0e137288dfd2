//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use survcam_core::region::{CompleterConfig, RegionNames};
use survcam_core::survival::TrainConfig;
use survcam_core::synth::SynthConfig;

/// Everything a run needs. The top-level `seed` replaces the seeds of the
/// `synth`, `train` and `completer` sections and also drives the data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort inputs: `features/`, `boxes/`, `labels.csv`, `layouts.json`.
    pub data_dir: PathBuf,
    /// Models, predictions, maps, reports and metrics.
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Time point for the time-dependent AUC, in days.
    pub horizon: f64,
    pub top_k: usize,
    /// Side length of exported heatmaps and of the map used for regional sums.
    pub image_size: usize,
    /// Share of subjects held out for evaluation.
    pub test_fraction: f64,
    /// Share of the remaining subjects used for model selection.
    pub val_fraction: f64,
    /// Layouts written by `synth` for completer training.
    pub n_layouts: usize,
    pub region_names: RegionNames,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub completer: CompleterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 42,
            horizon: 2.0,
            top_k: 5,
            image_size: 224,
            test_fraction: 0.2,
            val_fraction: 0.125,
            n_layouts: 5000,
            region_names: RegionNames::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            completer: CompleterConfig::default(),
        };
        cfg.sync_seeds();
        cfg
    }
}

/// Flag values that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub top_k: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.sync_seeds();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Loads `path` if given, applies the overrides and validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(k) = o.top_k {
            self.top_k = k;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(dir) = &o.data_dir {
            self.data_dir = dir.clone();
        }
        self.sync_seeds();
    }

    fn sync_seeds(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.completer.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.horizon > 0.0, "horizon must be > 0");
        ensure!(
            (1..=survcam_core::region::N_REGIONS).contains(&self.top_k),
            "top_k must lie in 1..=29"
        );
        ensure!(self.image_size >= 1, "image_size must be >= 1");
        ensure!(
            (0.0..1.0).contains(&self.test_fraction) && (0.0..1.0).contains(&self.val_fraction),
            "test_fraction and val_fraction must lie in [0, 1)"
        );
        self.train.validate()?;
        self.completer.validate()?;
        Ok(())
    }

    pub fn features_dir(&self) -> PathBuf {
        self.data_dir.join("features")
    }

    pub fn feature_path(&self, subject: &str) -> PathBuf {
        self.features_dir().join(format!("{subject}.fmap"))
    }

    pub fn boxes_dir(&self) -> PathBuf {
        self.data_dir.join("boxes")
    }

    pub fn boxes_path(&self, subject: &str) -> PathBuf {
        self.boxes_dir().join(format!("{subject}.json"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.data_dir.join("labels.csv")
    }

    pub fn layouts_path(&self) -> PathBuf {
        self.data_dir.join("layouts.json")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
