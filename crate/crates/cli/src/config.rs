//! Experiment configuration files (TOML). Every command is reproducible from
//! its config file alone; seeds live in the config, not on the command line.

use std::path::{Path, PathBuf};

use oled_core::detach::DetachParams;
use oled_core::evalrep::RoiSpec;
use oled_core::phantom::RandomTemplateSpec;
use oled_core::{GridSpec, SequenceParams};
use oled_net::{NetworkConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn load_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    toml::from_str(&text).map_err(|source| CliError::Toml { path: path.to_path_buf(), source })
}

/// Acquisition settings shared by every sample; the shift layout is the
/// default one for the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSettings {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub te1_ms: f64,
    pub te2_ms: f64,
}

impl Default for SequenceSettings {
    fn default() -> Self {
        SequenceSettings { alpha_deg: 45.0, beta_deg: 180.0, te1_ms: 22.0, te2_ms: 68.0 }
    }
}

impl SequenceSettings {
    pub fn params_for(&self, grid: &GridSpec) -> SequenceParams {
        SequenceParams {
            alpha_deg: self.alpha_deg,
            beta_deg: self.beta_deg,
            te1_ms: self.te1_ms,
            te2_ms: self.te2_ms,
            ..SequenceParams::default_for(grid)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_fov")]
    pub fov_cm: [f64; 2],
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Each echo's shift vector is scaled by `1 + u`, `u ~ U[-jitter_frac, jitter_frac]`.
    #[serde(default = "default_jitter")]
    pub jitter_frac: f64,
    /// `inf` for noiseless data.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    /// Echo-3 notch width in cycles; the grid default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_sigma_cyc: Option<f64>,
    #[serde(default)]
    pub sequence: SequenceSettings,
    /// `seed` inside the template is ignored; per-sample seeds are derived.
    #[serde(default)]
    pub template: RandomTemplateSpec,
}

fn default_fov() -> [f64; 2] {
    [22.0, 22.0]
}
fn default_train_fraction() -> f64 {
    0.9
}
fn default_jitter() -> f64 {
    0.1
}
fn default_snr() -> f64 {
    115.3
}

impl DatasetConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.rows, self.cols, self.fov_cm[0], self.fov_cm[1])?)
    }

    pub fn nominal_params(&self) -> Result<SequenceParams> {
        let p = self.sequence.params_for(&self.grid()?);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.nominal_params()?;
        self.template.validate()?;
        if self.count == 0 {
            return Err(CliError::Config("count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(CliError::Config(format!("train_fraction {} outside [0, 1]", self.train_fraction)));
        }
        if !(0.0..1.0).contains(&self.jitter_frac) {
            return Err(CliError::Config(format!("jitter_frac {} outside [0, 1)", self.jitter_frac)));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(CliError::Config("snr_db must be a number or inf".into()));
        }
        if let Some(s) = self.filter_sigma_cyc {
            if !(s > 0.0) {
                return Err(CliError::Config("filter_sigma_cyc must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn snr(&self) -> Option<f64> {
        self.snr_db.is_finite().then_some(self.snr_db)
    }
}

/// `oled train`: dataset directory plus network and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Directory holding `manifest.json`, relative to the config file.
    pub dataset: PathBuf,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub detach: DetachParams,
    pub guided_filter: bool,
    /// Timed repetitions after one untimed warm-up run.
    pub runs: usize,
    /// When present, the checkpoint must have exactly this architecture.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig { detach: DetachParams::default(), guided_filter: true, runs: 5, network: None }
    }
}

/// Regions of interest: an explicit list or the built-in brain layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub brain_rois: bool,
    pub roi: Vec<RoiSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { brain_rois: true, roi: Vec::new() }
    }
}

impl EvalConfig {
    pub fn rois(&self, grid: &GridSpec) -> Vec<RoiSpec> {
        let mut out = if self.brain_rois { oled_core::evalrep::brain_rois(grid) } else { Vec::new() };
        out.extend(self.roi.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Depth,
    Robustness,
}

/// `oled sweep`. Depth sweeps train one model per entry of `depths` on the
/// jittered dataset; robustness sweeps train a single-sequence model
/// (no jitter) and a multiple-sequence model (`dataset.jitter_frac`) and
/// evaluate both at every entry of `deviations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_deviations")]
    pub deviations: Vec<f64>,
    /// Side of the square brain phantom used for evaluation.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    /// Noise on the evaluation image; `inf` for noiseless.
    #[serde(default = "default_snr")]
    pub eval_snr_db: f64,
    #[serde(default)]
    pub guided_filter: bool,
}

fn default_depths() -> Vec<usize> {
    vec![4, 6, 8]
}
fn default_deviations() -> Vec<f64> {
    vec![0.0, 0.05, 0.10]
}
fn default_eval_size() -> usize {
    64
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.network.validate()?;
        GridSpec::square(self.eval_size).validate()?;
        match self.kind {
            SweepKind::Depth if self.depths.is_empty() => Err(CliError::Config("depth sweep needs depths".into())),
            SweepKind::Robustness if self.deviations.is_empty() => {
                Err(CliError::Config("robustness sweep needs deviations".into()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_defaults_fill_in() {
        let cfg: DatasetConfig = toml::from_str("seed = 1\ncount = 4\nrows = 32\ncols = 32\n").unwrap();
        assert_eq!(cfg.train_fraction, 0.9);
        assert_eq!(cfg.jitter_frac, 0.1);
        assert_eq!(cfg.snr(), Some(115.3));
        assert_eq!(cfg.sequence, SequenceSettings::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn infinite_snr_means_noiseless() {
        let cfg: DatasetConfig = toml::from_str("seed = 1\ncount = 4\nrows = 32\ncols = 32\nsnr_db = inf\n").unwrap();
        assert_eq!(cfg.snr(), None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<DatasetConfig>("seed = 1\ncount = 4\nrows = 32\ncols = 32\njiter = 0.1\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let base = DatasetConfig {
            seed: 0,
            count: 2,
            rows: 16,
            cols: 16,
            fov_cm: default_fov(),
            train_fraction: 0.5,
            jitter_frac: 0.0,
            snr_db: 40.0,
            filter_sigma_cyc: None,
            sequence: SequenceSettings::default(),
            template: RandomTemplateSpec::default(),
        };
        base.validate().unwrap();
        assert!(DatasetConfig { count: 0, ..base.clone() }.validate().is_err());
        assert!(DatasetConfig { train_fraction: 1.5, ..base.clone() }.validate().is_err());
        assert!(DatasetConfig { jitter_frac: -0.1, ..base.clone() }.validate().is_err());
        assert!(DatasetConfig { rows: 4, ..base.clone() }.validate().is_err());
        assert!(DatasetConfig { filter_sigma_cyc: Some(0.0), ..base }.validate().is_err());
    }
}
