//! Centered unitary 2-D FFT pair, Gaussian k-space echo filter and
//! zero-padding.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Domain, GridSpec};
use crate::scalar::Real;
use crate::seqsim::SequenceParams;

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// Swap halves so index `n/2` moves to 0 (`inverse = true`) or back.
fn shift_axes<T: Copy>(data: &[T], rows: usize, cols: usize, inverse: bool) -> Vec<T> {
    let (sr, sc) = if inverse { (rows - rows / 2, cols - cols / 2) } else { (rows / 2, cols / 2) };
    let mut out = Vec::with_capacity(data.len());
    for r in 0..rows {
        let rr = (r + sr) % rows;
        for c in 0..cols {
            out.push(data[rr * cols + (c + sc) % cols]);
        }
    }
    out
}

fn fft2<T: Real>(img: &ComplexImage<T>, dir: Direction) -> Vec<Complex<T>> {
    let (rows, cols) = (img.grid.rows, img.grid.cols);
    // Centered data has the origin at n/2: move it to index 0 first.
    let mut buf = shift_axes(&img.data, rows, cols, false);
    let mut planner = FftPlanner::<T>::new();
    let (row_fft, col_fft) = match dir {
        Direction::Forward => (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows)),
        Direction::Inverse => (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows)),
    };
    row_fft.process(&mut buf);
    let mut column = vec![Complex::new(T::zero(), T::zero()); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    let scale = T::one() / T::from_usize_lossy(rows * cols).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    shift_axes(&buf, rows, cols, true)
}

/// Unitary centered DFT, image → k-space.
pub fn fft2_centered<T: Real>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    img.expect_domain(Domain::Image)?;
    Ok(ComplexImage { grid: img.grid, data: fft2(img, Direction::Forward), domain: Domain::Kspace })
}

/// Unitary centered inverse DFT, k-space → image.
pub fn ifft2_centered<T: Real>(k: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    k.expect_domain(Domain::Kspace)?;
    Ok(ComplexImage { grid: k.grid, data: fft2(k, Direction::Inverse), domain: Domain::Image })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Pass,
    Reject,
}

/// Gaussian window `g(k) = exp(-|k - center|² / 2σ²)` in cycles/FOV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianEchoFilter {
    pub center_cyc: [f64; 2],
    pub sigma_cyc: f64,
    pub mode: FilterMode,
}

impl GaussianEchoFilter {
    /// Default width N/16 cycles/FOV for an N-wide acquisition.
    pub fn default_sigma(grid: &GridSpec) -> f64 {
        grid.rows.min(grid.cols) as f64 / 16.0
    }

    /// Filter gain at k-space offset `k` (cycles/FOV). Distances are taken on
    /// the periodic k-space torus so an echo centred on the Nyquist edge is
    /// treated as one lobe.
    pub fn gain(&self, grid: &GridSpec, k: [f64; 2]) -> f64 {
        let d2 = periodic_dist2(grid, k, self.center_cyc);
        let g = (-d2 / (2.0 * self.sigma_cyc * self.sigma_cyc)).exp();
        match self.mode {
            FilterMode::Pass => g,
            FilterMode::Reject => 1.0 - g,
        }
    }
}

fn wrap(d: f64, n: f64) -> f64 {
    (d + n / 2.0).rem_euclid(n) - n / 2.0
}

/// Squared minimum-image distance between two k-space positions.
pub fn periodic_dist2(grid: &GridSpec, a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = wrap(a[0] - b[0], grid.cols as f64);
    let dy = wrap(a[1] - b[1], grid.rows as f64);
    dx * dx + dy * dy
}

/// k-space coordinate (cycles/FOV) of centered bin `(r, c)`.
#[inline]
pub fn bin_coord(grid: &GridSpec, r: usize, c: usize) -> [f64; 2] {
    [c as f64 - (grid.cols / 2) as f64, r as f64 - (grid.rows / 2) as f64]
}

pub fn apply_echo_filter<T: Real>(k: &ComplexImage<T>, f: &GaussianEchoFilter) -> Result<ComplexImage<T>> {
    k.expect_domain(Domain::Kspace)?;
    if !(f.sigma_cyc > 0.0) {
        return Err(Error::InvalidValue(format!("filter sigma must be positive, got {}", f.sigma_cyc)));
    }
    let grid = k.grid;
    let mut out = k.clone();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let g = T::lit(f.gain(&grid, bin_coord(&grid, r, c)));
            let z = &mut out.data[r * grid.cols + c];
            *z *= g;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EchoRemoval<T> {
    pub image: ComplexImage<T>,
    /// Set when echo 3 sits within 3σ of echo 1 or 2, so the notch also
    /// removes part of the wanted signal.
    pub overlap_warning: bool,
}

/// Suppresses the double spin echo with a Gaussian notch at `shift3_cyc`.
pub fn remove_double_echo<T: Real>(
    img: &ComplexImage<T>,
    params: &SequenceParams,
    sigma_cyc: f64,
) -> Result<EchoRemoval<T>> {
    img.expect_domain(Domain::Image)?;
    let grid = img.grid;
    let filter = GaussianEchoFilter { center_cyc: params.shift3_cyc, sigma_cyc, mode: FilterMode::Reject };
    let k = apply_echo_filter(&fft2_centered(img)?, &filter)?;
    let limit = (3.0 * sigma_cyc).powi(2);
    let overlap_warning = periodic_dist2(&grid, params.shift3_cyc, params.shift1_cyc) < limit
        || periodic_dist2(&grid, params.shift3_cyc, params.shift2_cyc) < limit;
    Ok(EchoRemoval { image: ifft2_centered(&k)?, overlap_warning })
}

/// Symmetric zero-padding of centered k-space. With the unitary transform
/// the padded data keeps its energy, so image intensities after the inverse
/// FFT scale by `sqrt(source / target)` pixel counts.
pub fn zero_pad<T: Real>(k: &ComplexImage<T>, target: &GridSpec) -> Result<ComplexImage<T>> {
    k.expect_domain(Domain::Kspace)?;
    let (sr, sc) = (k.grid.rows, k.grid.cols);
    if target.rows < sr || target.cols < sc {
        return Err(Error::Shape(format!("cannot pad {}x{} down to {}x{}", sr, sc, target.rows, target.cols)));
    }
    let (or, oc) = (target.rows / 2 - sr / 2, target.cols / 2 - sc / 2);
    let mut out = ComplexImage::zeros(*target, Domain::Kspace);
    for r in 0..sr {
        for c in 0..sc {
            out.data[(r + or) * target.cols + c + oc] = k.get(r, c);
        }
    }
    Ok(out)
}

/// Sinc interpolation of an image onto a finer grid by k-space
/// zero-padding, rescaled so intensities are preserved.
pub fn sinc_upsample<T: Real>(img: &ComplexImage<T>, target: &GridSpec) -> Result<ComplexImage<T>> {
    let padded = zero_pad(&fft2_centered(img)?, target)?;
    let gain = T::lit(((target.len()) as f64 / img.grid.len() as f64).sqrt());
    Ok(ifft2_centered(&padded)?.scale(gain))
}
