//! ROI statistics, T2 error reports and profile traces.
//!
//! Standard deviations are population (1/n) standard deviations. A pixel
//! belongs to a circular ROI when its center lies within the radius.

use serde::{Deserialize, Serialize};

use crate::detach::median;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Raster};
use crate::phantom::{brain_classes, BrainClass};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub id: u32,
    /// `[x (column), y (row)]` in pixels.
    pub center_px: [f64; 2],
    pub radius_px: f64,
}

impl RoiSpec {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let [x, y] = self.center_px;
        let r = self.radius_px;
        if !(r >= 1.0) {
            return Err(Error::Config(format!("ROI {} radius {} < 1", self.id, r)));
        }
        if x - r < -0.5 || y - r < -0.5 || x + r > cols as f64 - 0.5 || y + r > rows as f64 - 0.5 {
            return Err(Error::OutOfBounds(format!("ROI {} extends outside the {}x{} grid", self.id, rows, cols)));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let dx = c as f64 - self.center_px[0];
        let dy = r as f64 - self.center_px[1];
        dx * dx + dy * dy <= self.radius_px * self.radius_px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiStat {
    pub id: u32,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n: usize,
}

/// Mean and population std of masked pixels inside each ROI. ROIs with no
/// masked pixel report `n = 0` and NaN statistics.
pub fn roi_stats<T: Real>(t2: &Raster<T>, mask: &Raster<bool>, rois: &[RoiSpec]) -> Result<Vec<RoiStat>> {
    if !t2.same_shape(mask) {
        return Err(Error::Shape("T2 raster and mask differ in shape".into()));
    }
    rois.iter()
        .map(|roi| {
            roi.validate(t2.rows, t2.cols)?;
            let (mut n, mut s, mut s2) = (0usize, 0.0f64, 0.0f64);
            for r in 0..t2.rows {
                for c in 0..t2.cols {
                    if mask.get(r, c) && roi.contains(r, c) {
                        let v = t2.get(r, c).as_f64();
                        n += 1;
                        s += v;
                        s2 += v * v;
                    }
                }
            }
            let (mean, std) = if n > 0 {
                let mean = s / n as f64;
                (mean, (s2 / n as f64 - mean * mean).max(0.0).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(RoiStat { id: roi.id, mean_ms: mean, std_ms: std, n })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiDeviation {
    pub id: u32,
    pub est_mean_ms: f64,
    pub ref_mean_ms: f64,
    pub delta_ms: f64,
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2ErrorReport {
    pub n_pixels: usize,
    pub median_rel_error: f64,
    pub mean_rel_error: f64,
    pub rmse_ms: f64,
    pub roi_deviations: Vec<RoiDeviation>,
    pub worst_roi: Option<RoiDeviation>,
    /// `est − ref` on the mask, 0 elsewhere.
    #[serde(skip)]
    pub error_map: Option<Raster<f64>>,
}

/// Compares an estimated T2 map with the reference over `mask` (pixels with
/// a positive reference only). ROI deviations compare ROI means of the two
/// maps over the same pixels.
pub fn t2_error_report<T: Real>(
    est: &Raster<T>,
    reference: &Raster<T>,
    mask: &Raster<bool>,
    rois: &[RoiSpec],
) -> Result<T2ErrorReport> {
    if !est.same_shape(reference) || !est.same_shape(mask) {
        return Err(Error::Shape("estimate, reference and mask must share a grid".into()));
    }
    let eff = Raster::from_fn(est.rows, est.cols, |r, c| mask.get(r, c) && reference.get(r, c) > T::zero());
    let mut rel = Vec::new();
    let mut sq = 0.0;
    let mut error_map = Raster::filled(est.rows, est.cols, 0.0f64);
    for i in 0..eff.data.len() {
        if eff.data[i] {
            let (e, r) = (est.data[i].as_f64(), reference.data[i].as_f64());
            rel.push((e - r).abs() / r);
            sq += (e - r) * (e - r);
            error_map.data[i] = e - r;
        }
    }
    if rel.is_empty() {
        return Err(Error::EmptySupport("error report mask is empty".into()));
    }
    let n = rel.len();
    let mean_rel = rel.iter().sum::<f64>() / n as f64;
    let median_rel = median(&mut rel);

    let est_stats = roi_stats(est, &eff, rois)?;
    let ref_stats = roi_stats(reference, &eff, rois)?;
    let roi_deviations: Vec<RoiDeviation> = est_stats
        .iter()
        .zip(&ref_stats)
        .filter(|(e, _)| e.n > 0)
        .map(|(e, r)| {
            let delta = (e.mean_ms - r.mean_ms).abs();
            RoiDeviation {
                id: e.id,
                est_mean_ms: e.mean_ms,
                ref_mean_ms: r.mean_ms,
                delta_ms: delta,
                delta_pct: 100.0 * delta / r.mean_ms,
            }
        })
        .collect();
    let worst_roi = roi_deviations.iter().copied().max_by(|a, b| a.delta_pct.partial_cmp(&b.delta_pct).unwrap());
    Ok(T2ErrorReport {
        n_pixels: n,
        median_rel_error: median_rel,
        mean_rel_error: mean_rel,
        rmse_ms: (sq / n as f64).sqrt(),
        roi_deviations,
        worst_roi,
        error_map: Some(error_map),
    })
}

/// Bilinear sample at `[x, y]` pixel coordinates.
pub fn bilinear<T: Real>(img: &Raster<T>, x: f64, y: f64) -> Result<f64> {
    let (w, h) = (img.cols as f64, img.rows as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
        return Err(Error::OutOfBounds(format!("sample ({x}, {y}) outside {}x{}", img.rows, img.cols)));
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.cols - 1), (y0 + 1).min(img.rows - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let v = |r: usize, c: usize| img.get(r, c).as_f64();
    Ok((1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1)))
}

/// Samples along a polyline; arc position is cumulative Euclidean length in pixels.
pub fn profile_trace<T: Real>(t2: &Raster<T>, path: &[[f64; 2]]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(path.len());
    let mut arc = 0.0;
    for (i, p) in path.iter().enumerate() {
        if i > 0 {
            let q = path[i - 1];
            arc += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        }
        out.push((arc, bilinear(t2, p[0], p[1])?));
    }
    Ok(out)
}

/// Closed circle starting at three o'clock and running anticlockwise as seen
/// on screen (rows grow downward). Returns `n + 1` points; the last repeats
/// the first.
pub fn circle_path(center: [f64; 2], radius: f64, n: usize) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            [center[0] + radius * th.cos(), center[1] - radius * th.sin()]
        })
        .collect();
    if let Some(&first) = pts.first() {
        pts.push(first);
    }
    pts
}

// (x, y) in normalized [-1, 1] coordinates, radius as a fraction of half the grid.
const BRAIN_ROI_LAYOUT: [(f64, f64, f64); 15] = [
    (-0.45, 0.00, 0.05),
    (0.45, 0.00, 0.05),
    (-0.30, -0.45, 0.05),
    (0.30, -0.45, 0.05),
    (-0.25, 0.45, 0.05),
    (0.25, 0.45, 0.05),
    (0.00, 0.15, 0.04),
    (-0.27, 0.10, 0.05),
    (0.27, 0.10, 0.05),
    (0.00, -0.76, 0.035),
    (-0.68, 0.00, 0.035),
    (0.68, 0.00, 0.035),
    (0.00, 0.76, 0.035),
    (-0.48, -0.38, 0.04),
    (0.48, -0.38, 0.04),
];

/// The 15 evaluation ROIs on the brain phantom: white matter (1-7), deep
/// gray nuclei (8-9), cortical gray matter (10-13) and cortical folds (14-15).
pub fn brain_rois(grid: &GridSpec) -> Vec<RoiSpec> {
    let (hw, hh) = (grid.cols as f64 / 2.0, grid.rows as f64 / 2.0);
    BRAIN_ROI_LAYOUT
        .iter()
        .enumerate()
        .map(|(i, &(u, v, rad))| RoiSpec {
            id: i as u32 + 1,
            center_px: [(u + 1.0) * hw - 0.5, (v + 1.0) * hh - 0.5],
            radius_px: (rad * hw.min(hh)).max(1.0),
        })
        .collect()
}

/// Brain phantom tissue class expected inside each ROI of [`brain_rois`].
pub fn brain_roi_class(id: u32) -> BrainClass {
    match id {
        1..=7 => BrainClass::WhiteMatter,
        _ => BrainClass::GrayMatter,
    }
}

/// Pixels of the brain phantom whose whole `(2r+1)²` neighbourhood shares
/// their (non-background) class.
pub fn brain_interior_mask(grid: &GridSpec, r: usize) -> Raster<bool> {
    let classes = brain_classes(grid);
    interior_of(&classes, r, |c| c != BrainClass::Background)
}

/// Pixels whose `(2r+1)²` neighbourhood has a uniform label accepted by `keep`.
pub fn interior_of<L: Copy + PartialEq>(labels: &Raster<L>, r: usize, keep: impl Fn(L) -> bool) -> Raster<bool> {
    let (rows, cols) = (labels.rows, labels.cols);
    Raster::from_fn(rows, cols, |y, x| {
        let l = labels.get(y, x);
        if !keep(l) || y < r || x < r || y + r >= rows || x + r >= cols {
            return false;
        }
        (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| labels.get(yy, xx) == l))
    })
}
