//! Tissue phantoms: seeded random templates for training data and a fixed
//! layered brain-like phantom for evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_blur, GridSpec, Raster};
use crate::rng::{self, Purpose};
use crate::scalar::Real;

/// Per-voxel T2 (ms) and proton density over a grid. T2 is 0 wherever pd is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMap<T> {
    pub grid: GridSpec,
    pub t2_ms: Raster<T>,
    pub pd: Raster<T>,
}

impl<T: Real> TissueMap<T> {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (r, c) = (self.grid.rows, self.grid.cols);
        if self.t2_ms.rows != r || self.t2_ms.cols != c || self.pd.rows != r || self.pd.cols != c {
            return Err(Error::Shape("tissue rasters do not match the grid".into()));
        }
        for (&t2, &pd) in self.t2_ms.data.iter().zip(&self.pd.data) {
            if !(pd >= T::zero() && pd <= T::one()) {
                return Err(Error::InvalidValue(format!("pd {pd} outside [0, 1]")));
            }
            if pd > T::zero() && !(t2 > T::zero()) {
                return Err(Error::InvalidValue(format!("non-positive T2 {t2} on a pd > 0 voxel")));
            }
        }
        Ok(())
    }

    /// Pixels carrying signal.
    pub fn support(&self) -> Raster<bool> {
        self.pd.map(|p| p > T::zero())
    }

    pub fn cast<U: Real>(&self) -> TissueMap<U> {
        TissueMap { grid: self.grid, t2_ms: self.t2_ms.cast(), pd: self.pd.cast() }
    }
}

/// Recipe for a random training template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomTemplateSpec {
    pub seed: u64,
    pub n_shapes: [usize; 2],
    pub t2_range_ms: [f64; 2],
    pub csf_t2_range_ms: [f64; 2],
    pub csf_fraction: f64,
    pub pd_range: [f64; 2],
    pub smooth_sigma_px: f64,
}

impl Default for RandomTemplateSpec {
    fn default() -> Self {
        RandomTemplateSpec {
            seed: 0,
            n_shapes: [5, 30],
            t2_range_ms: [30.0, 300.0],
            csf_t2_range_ms: [500.0, 2000.0],
            csf_fraction: 0.15,
            pd_range: [0.3, 1.0],
            smooth_sigma_px: 0.7,
        }
    }
}

impl RandomTemplateSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |name: &str, r: [f64; 2], lo_min: f64| -> Result<()> {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo_min) {
                return Err(Error::Config(format!("{name} range [{}, {}] is invalid", r[0], r[1])));
            }
            Ok(())
        };
        if self.n_shapes[0] < 1 || self.n_shapes[0] > self.n_shapes[1] {
            return Err(Error::Config(format!(
                "n_shapes range [{}, {}] is invalid",
                self.n_shapes[0], self.n_shapes[1]
            )));
        }
        range_ok("t2_range_ms", self.t2_range_ms, f64::MIN_POSITIVE)?;
        range_ok("csf_t2_range_ms", self.csf_t2_range_ms, f64::MIN_POSITIVE)?;
        range_ok("pd_range", self.pd_range, f64::MIN_POSITIVE)?;
        if self.pd_range[1] > 1.0 {
            return Err(Error::Config("pd_range upper bound exceeds 1".into()));
        }
        if !(0.0..=1.0).contains(&self.csf_fraction) {
            return Err(Error::Config(format!("csf_fraction {} outside [0, 1]", self.csf_fraction)));
        }
        if !(self.smooth_sigma_px >= 0.0) {
            return Err(Error::Config("smooth_sigma_px must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Ellipse { cx: f64, cy: f64, ax: f64, ay: f64, cos: f64, sin: f64 },
    Polygon { verts: Vec<(f64, f64)> },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, ax, ay, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
            }
            // Vertices are in counter-clockwise order (math orientation) so the
            // interior is on the left of every edge.
            Shape::Polygon { verts } => (0..verts.len()).all(|i| {
                let (x0, y0) = verts[i];
                let (x1, y1) = verts[(i + 1) % verts.len()];
                (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0.0
            }),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn random_shape(rng: &mut ChaCha8Rng, grid: &GridSpec, body: bool) -> Shape {
    let (w, h) = (grid.cols as f64, grid.rows as f64);
    let m = w.min(h);
    if body {
        let cx = w * (0.5 + rng.random_range(-0.04..0.04));
        let cy = h * (0.5 + rng.random_range(-0.04..0.04));
        let ax = w * rng.random_range(0.34..0.47);
        let ay = h * rng.random_range(0.34..0.47);
        let th: f64 = rng.random_range(-0.3..0.3);
        return Shape::Ellipse { cx, cy, ax, ay, cos: th.cos(), sin: th.sin() };
    }
    let cx = w * rng.random_range(0.15..0.85);
    let cy = h * rng.random_range(0.15..0.85);
    let ax = (m * rng.random_range(0.03..0.2)).max(1.0);
    let ay = (m * rng.random_range(0.03..0.2)).max(1.0);
    let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
    if rng.random_bool(0.5) {
        Shape::Ellipse { cx, cy, ax, ay, cos: th.cos(), sin: th.sin() }
    } else {
        let n = rng.random_range(3..=8);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Points on an ellipse in angular order form a convex polygon.
        let verts = angles
            .into_iter()
            .map(|a| {
                let (u, v) = (ax * a.cos(), ay * a.sin());
                (cx + u * th.cos() - v * th.sin(), cy + u * th.sin() + v * th.cos())
            })
            .collect();
        Shape::Polygon { verts }
    }
}

/// Random template of overlapping ellipses and convex polygons with
/// piecewise-constant T2 and pd on a zero background.
///
/// The first shape is a large body ellipse with tissue T2; later shapes are
/// painted over earlier ones and draw their T2 from the CSF range with
/// probability `csf_fraction`. With `smooth_sigma_px > 0` pd is blurred and
/// T2 becomes the pd-weighted blur of T2, which keeps every value inside the
/// hull of the painted values.
pub fn make_random_phantom<T: Real>(spec: &RandomTemplateSpec, grid: &GridSpec) -> Result<TissueMap<T>> {
    grid.validate()?;
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, 0, Purpose::Phantom);
    let n_shapes = if spec.n_shapes[0] == spec.n_shapes[1] {
        spec.n_shapes[0]
    } else {
        rng.random_range(spec.n_shapes[0]..=spec.n_shapes[1])
    };

    let (rows, cols) = (grid.rows, grid.cols);
    let mut t2 = Raster::filled(rows, cols, 0.0f64);
    let mut pd = Raster::filled(rows, cols, 0.0f64);
    for i in 0..n_shapes {
        let shape = random_shape(&mut rng, grid, i == 0);
        let is_csf = i > 0 && rng.random_bool(spec.csf_fraction);
        let t2_val = if is_csf { uniform(&mut rng, spec.csf_t2_range_ms) } else { uniform(&mut rng, spec.t2_range_ms) };
        let pd_val = uniform(&mut rng, spec.pd_range);
        for r in 0..rows {
            for c in 0..cols {
                if shape.contains(c as f64 + 0.5, r as f64 + 0.5) {
                    t2.set(r, c, t2_val);
                    pd.set(r, c, pd_val);
                }
            }
        }
    }

    if spec.smooth_sigma_px > 0.0 {
        let weighted = Raster::from_fn(rows, cols, |r, c| pd.get(r, c) * t2.get(r, c));
        let pd_s = gaussian_blur(&pd, spec.smooth_sigma_px);
        let w_s = gaussian_blur(&weighted, spec.smooth_sigma_px);
        let (lo, hi) =
            (spec.t2_range_ms[0].min(spec.csf_t2_range_ms[0]), spec.t2_range_ms[1].max(spec.csf_t2_range_ms[1]));
        for i in 0..rows * cols {
            let p = pd_s.data[i];
            if p > 1e-12 {
                pd.data[i] = p.min(1.0);
                t2.data[i] = (w_s.data[i] / p).clamp(lo, hi);
            } else {
                pd.data[i] = 0.0;
                t2.data[i] = 0.0;
            }
        }
    }

    Ok(TissueMap { grid: *grid, t2_ms: t2.cast(), pd: pd.cast() })
}

/// Tissue classes of the evaluation phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrainClass {
    Background,
    Scalp,
    Csf,
    GrayMatter,
    WhiteMatter,
}

impl BrainClass {
    /// (T2 in ms, proton density).
    pub fn properties(self) -> (f64, f64) {
        match self {
            BrainClass::Background => (0.0, 0.0),
            BrainClass::Scalp => (60.0, 0.7),
            BrainClass::Csf => (1000.0, 1.0),
            BrainClass::GrayMatter => (110.0, 0.8),
            BrainClass::WhiteMatter => (80.0, 0.65),
        }
    }
}

/// Ellipse in normalized coordinates, both axes spanning [-1, 1].
struct NormEllipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl NormEllipse {
    const fn new(cx: f64, cy: f64, ax: f64, ay: f64) -> Self {
        NormEllipse { cx, cy, ax, ay }
    }
    fn contains(&self, u: f64, v: f64) -> bool {
        ((u - self.cx) / self.ax).powi(2) + ((v - self.cy) / self.ay).powi(2) <= 1.0
    }
}

// Painted in order; later entries overwrite earlier ones.
const BRAIN_LAYERS: &[(NormEllipse, BrainClass)] = &[
    (NormEllipse::new(0.0, 0.0, 0.86, 0.94), BrainClass::Scalp),
    (NormEllipse::new(0.0, 0.0, 0.78, 0.86), BrainClass::Csf),
    (NormEllipse::new(0.0, 0.0, 0.74, 0.82), BrainClass::GrayMatter),
    (NormEllipse::new(0.0, 0.0, 0.62, 0.70), BrainClass::WhiteMatter),
    // cortical folds reaching into white matter
    (NormEllipse::new(-0.48, -0.38, 0.13, 0.08), BrainClass::GrayMatter),
    (NormEllipse::new(0.48, -0.38, 0.13, 0.08), BrainClass::GrayMatter),
    (NormEllipse::new(-0.52, 0.30, 0.10, 0.07), BrainClass::GrayMatter),
    (NormEllipse::new(0.52, 0.30, 0.10, 0.07), BrainClass::GrayMatter),
    // deep gray nuclei
    (NormEllipse::new(-0.27, 0.10, 0.10, 0.16), BrainClass::GrayMatter),
    (NormEllipse::new(0.27, 0.10, 0.10, 0.16), BrainClass::GrayMatter),
    // ventricles and a thin midline fissure
    (NormEllipse::new(-0.10, -0.12, 0.05, 0.22), BrainClass::Csf),
    (NormEllipse::new(0.10, -0.12, 0.05, 0.22), BrainClass::Csf),
    (NormEllipse::new(0.0, -0.62, 0.015, 0.10), BrainClass::Csf),
    (NormEllipse::new(0.0, 0.40, 0.04, 0.04), BrainClass::Csf),
];

fn normalized_center(grid: &GridSpec, r: usize, c: usize) -> (f64, f64) {
    let u = (c as f64 + 0.5) / grid.cols as f64 * 2.0 - 1.0;
    let v = (r as f64 + 0.5) / grid.rows as f64 * 2.0 - 1.0;
    (u, v)
}

/// Class label of every pixel of the brain phantom.
pub fn brain_classes(grid: &GridSpec) -> Raster<BrainClass> {
    Raster::from_fn(grid.rows, grid.cols, |r, c| {
        let (u, v) = normalized_center(grid, r, c);
        BRAIN_LAYERS
            .iter()
            .filter(|(e, _)| e.contains(u, v))
            .map(|&(_, class)| class)
            .next_back()
            .unwrap_or(BrainClass::Background)
    })
}

/// Fixed layered brain-like phantom: background, scalp ring, a thin CSF
/// layer, cortical gray matter, white matter, deep gray nuclei and CSF
/// ventricles, each with the constant T2/pd of [`BrainClass::properties`].
pub fn make_brain_phantom<T: Real>(grid: &GridSpec) -> Result<TissueMap<T>> {
    grid.validate()?;
    let classes = brain_classes(grid);
    Ok(TissueMap {
        grid: *grid,
        t2_ms: classes.map(|c| T::lit(c.properties().0)),
        pd: classes.map(|c| T::lit(c.properties().1)),
    })
}

/// Block average onto a coarser grid: pd is averaged, T2 is pd-weighted
/// (blocks without signal get T2 = 0).
pub fn downsample<T: Real>(map: &TissueMap<T>, target: &GridSpec) -> Result<TissueMap<T>> {
    target.validate()?;
    let (sr, sc) = (map.grid.rows, map.grid.cols);
    if target.rows > sr || target.cols > sc || sr % target.rows != 0 || sc % target.cols != 0 {
        return Err(Error::Shape(format!(
            "target {}x{} does not divide source {}x{}",
            target.rows, target.cols, sr, sc
        )));
    }
    let (fr, fc) = (sr / target.rows, sc / target.cols);
    let count = T::from_usize_lossy(fr * fc);
    let mut t2 = Raster::zeros(target.rows, target.cols);
    let mut pd = Raster::zeros(target.rows, target.cols);
    for r in 0..target.rows {
        for c in 0..target.cols {
            let (mut psum, mut wsum) = (T::zero(), T::zero());
            for i in 0..fr {
                for j in 0..fc {
                    let p = map.pd.get(r * fr + i, c * fc + j);
                    psum += p;
                    wsum += p * map.t2_ms.get(r * fr + i, c * fc + j);
                }
            }
            pd.set(r, c, psum / count);
            t2.set(r, c, if psum > T::zero() { wsum / psum } else { T::zero() });
        }
    }
    Ok(TissueMap { grid: *target, t2_ms: t2, pd })
}
