//! `manifest.json`: the index of a generated dataset directory.

use std::collections::BTreeSet;
use std::path::{Component, Path};

use oled_core::oimg::{Oimg, OimgMeta};
use oled_core::phantom::TissueMap;
use oled_core::{ComplexImage, Domain, GridSpec, SequenceParams};
use oled_net::Pair;
use serde::{Deserialize, Serialize};

use crate::config::DatasetConfig;
use crate::dataset::{Sample, Split};
use crate::error::{CliError, Result};
use crate::files::{load_oimg, save_oimg};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    /// Double-echo-removed OLED image, relative to the dataset directory.
    pub oled_path: String,
    /// Ground-truth tissue map (channels `t2_ms`, `pd`).
    pub t2_path: String,
    pub phantom_seed: u64,
    pub noise_seed: u64,
    pub params: SequenceParams,
    pub jitter: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: GridSpec,
    pub config: DatasetConfig,
    pub samples: Vec<SampleRecord>,
}

pub fn sample_file_names(index: usize) -> (String, String) {
    (format!("samples/{index:04}_oled.oimg"), format!("samples/{index:04}_t2.oimg"))
}

impl SampleRecord {
    pub fn new(sample: &Sample, split: Split) -> Self {
        let (oled_path, t2_path) = sample_file_names(sample.index);
        SampleRecord {
            index: sample.index,
            oled_path,
            t2_path,
            phantom_seed: sample.phantom_seed,
            noise_seed: sample.noise_seed,
            params: sample.params.clone(),
            jitter: sample.jitter,
            split,
        }
    }
}

fn check_relative(p: &str) -> Result<()> {
    let path = Path::new(p);
    if path.components().all(|c| matches!(c, Component::Normal(_))) && !p.is_empty() {
        Ok(())
    } else {
        Err(CliError::Manifest(format!("sample path {p:?} must be relative and stay inside the dataset directory")))
    }
}

impl DatasetManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read(&path).map_err(CliError::io(&path))?;
        let m: DatasetManifest =
            serde_json::from_slice(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        m.validate_records()?;
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::io(&path))
    }

    /// Structural checks that need no file access.
    pub fn validate_records(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(CliError::Manifest(format!("unsupported manifest version {}", self.version)));
        }
        self.grid.validate()?;
        let mut seen = BTreeSet::new();
        let mut files = BTreeSet::new();
        for r in &self.samples {
            if !seen.insert(r.index) {
                return Err(CliError::Manifest(format!("sample index {} listed twice", r.index)));
            }
            for p in [&r.oled_path, &r.t2_path] {
                check_relative(p)?;
                if !files.insert(p.clone()) {
                    return Err(CliError::Manifest(format!("file {p} referenced twice")));
                }
            }
        }
        Ok(())
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |r| r.split == split)
    }

    /// Reads one sample, checking container kind and grid.
    pub fn read_sample(&self, dir: &Path, r: &SampleRecord) -> Result<(ComplexImage<f32>, TissueMap<f32>)> {
        let load = |p: &str| load_oimg(&dir.join(p));
        let bad = |p: &str, what: String| CliError::Manifest(format!("{p}: {what}"));
        let img_file = load(&r.oled_path)?;
        if img_file.domain != Domain::Image {
            return Err(bad(&r.oled_path, "expected an image-domain container".into()));
        }
        let img = img_file.to_complex_image::<f32>().map_err(|e| bad(&r.oled_path, e.to_string()))?;
        if (img.grid.rows, img.grid.cols) != (self.grid.rows, self.grid.cols) {
            return Err(bad(&r.oled_path, "grid does not match the manifest".into()));
        }
        let map = load(&r.t2_path)?.to_tissue_map().map_err(|e| bad(&r.t2_path, e.to_string()))?;
        if (map.t2_ms.rows, map.t2_ms.cols) != (self.grid.rows, self.grid.cols) {
            return Err(bad(&r.t2_path, "grid does not match the manifest".into()));
        }
        Ok((img, map))
    }

    /// Loads and checks every referenced file.
    pub fn validate_files(&self, dir: &Path) -> Result<()> {
        for r in &self.samples {
            self.read_sample(dir, r)?;
        }
        Ok(())
    }

    pub fn load_pairs(&self, dir: &Path, split: Split) -> Result<Vec<Pair<f32>>> {
        self.records(split)
            .map(|r| {
                let (input, map) = self.read_sample(dir, r)?;
                Ok(Pair { input, t2_ms: map.t2_ms })
            })
            .collect()
    }
}

/// Writes the two files of one sample under `dir`.
pub fn write_sample(dir: &Path, sample: &Sample, root_seed: u64) -> Result<()> {
    let (oled, t2) = sample_file_names(sample.index);
    let grid = sample.image.grid;
    let meta =
        OimgMeta { grid: Some(grid), params: Some(sample.params.clone()), seed: Some(root_seed), ..Default::default() };
    save_oimg(&dir.join(oled), &Oimg::from_complex_image(&sample.image.cast::<f32>(), meta.clone()))?;
    save_oimg(&dir.join(t2), &Oimg::from_tissue_map(&sample.map.cast::<f32>(), meta)?)?;
    Ok(())
}
