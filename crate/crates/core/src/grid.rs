//! Grid geometry and the two raster containers shared by every module.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sampling grid over a physical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub fov_x_cm: f64,
    pub fov_y_cm: f64,
}

impl GridSpec {
    pub const MIN_DIM: usize = 8;

    pub fn new(rows: usize, cols: usize, fov_x_cm: f64, fov_y_cm: f64) -> Result<Self> {
        let g = GridSpec { rows, cols, fov_x_cm, fov_y_cm };
        g.validate()?;
        Ok(g)
    }

    /// Square grid over a 22 cm field of view.
    pub fn square(n: usize) -> Self {
        GridSpec { rows: n, cols: n, fov_x_cm: 22.0, fov_y_cm: 22.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < Self::MIN_DIM || self.cols < Self::MIN_DIM {
            return Err(Error::Config(format!(
                "grid {}x{} smaller than the {}x{} minimum",
                self.rows,
                self.cols,
                Self::MIN_DIM,
                Self::MIN_DIM
            )));
        }
        if !(self.fov_x_cm > 0.0 && self.fov_y_cm > 0.0) {
            return Err(Error::Config(format!(
                "field of view must be positive, got {} x {} cm",
                self.fov_x_cm, self.fov_y_cm
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same field of view, different sampling.
    pub fn resampled(&self, rows: usize, cols: usize) -> Self {
        GridSpec { rows, cols, ..*self }
    }
}

/// Dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Raster { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "raster {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Raster { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Raster { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> Self {
        Raster::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

impl<T: Real> Raster<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Raster::filled(rows, cols, T::zero())
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn cast<U: Real>(&self) -> Raster<U> {
        self.map(|v| U::lit(v.as_f64()))
    }
}

/// Which side of the Fourier transform a [`ComplexImage`] lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Kspace,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Image => "image",
            Domain::Kspace => "kspace",
        }
    }
}

/// Complex raster with grid metadata. k-space data is stored centered
/// (zero frequency at index `rows/2, cols/2`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<T> {
    pub grid: GridSpec,
    pub data: Vec<Complex<T>>,
    pub domain: Domain,
}

impl<T: Real> ComplexImage<T> {
    pub fn zeros(grid: GridSpec, domain: Domain) -> Self {
        ComplexImage { grid, data: vec![Complex::new(T::zero(), T::zero()); grid.len()], domain }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<Complex<T>>, domain: Domain) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "complex image {}x{} needs {} values, got {}",
                grid.rows,
                grid.cols,
                grid.len(),
                data.len()
            )));
        }
        Ok(ComplexImage { grid, data, domain })
    }

    pub fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::Domain { expected: expected.name(), got: self.domain.name() });
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.grid.cols + c]
    }

    pub fn magnitude(&self) -> Raster<T> {
        Raster { rows: self.grid.rows, cols: self.grid.cols, data: self.data.iter().map(|z| z.norm()).collect() }
    }

    pub fn norm_l2(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    pub fn scale(&self, s: T) -> Self {
        ComplexImage { grid: self.grid, data: self.data.iter().map(|z| z * s).collect(), domain: self.domain }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid.rows != other.grid.rows || self.grid.cols != other.grid.cols {
            return Err(Error::Shape("cannot add images on different grids".into()));
        }
        Ok(ComplexImage {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            domain: self.domain,
        })
    }

    pub fn cast<U: Real>(&self) -> ComplexImage<U> {
        ComplexImage {
            grid: self.grid,
            data: self.data.iter().map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64()))).collect(),
            domain: self.domain,
        }
    }
}

/// Separable Gaussian blur with reflective borders. The kernel is truncated
/// at `ceil(3 sigma)` and normalized. `sigma == 0` returns the input.
pub fn gaussian_blur<T: Real>(img: &Raster<T>, sigma: f64) -> Raster<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let kernel: Vec<T> = kernel.into_iter().map(T::lit).collect();

    let (rows, cols) = (img.rows, img.cols);
    let mut tmp = Raster::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (j, &k) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + j as isize - radius, cols);
                acc += k * img.get(r, cc);
            }
            tmp.set(r, c, acc);
        }
    }
    let mut out = Raster::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (j, &k) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + j as isize - radius, rows);
                acc += k * tmp.get(rr, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Symmetric (half-sample) reflection of an index into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(8, 8, 22.0, 22.0).is_ok());
        assert!(GridSpec::new(7, 8, 22.0, 22.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 22.0).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Raster::filled(12, 9, 3.5f64);
        let out = gaussian_blur(&img, 1.3);
        assert!(out.data.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }
}
