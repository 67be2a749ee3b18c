//! Training pairs, input normalization and random patch sampling.

use oled_core::{ComplexImage, Domain, Raster, Real};
use rand::Rng;

use crate::error::{NetError, Result};
use crate::tensor::Tensor4;

/// One double-echo-removed OLED image with its reference T2 map (ms).
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub input: ComplexImage<T>,
    pub t2_ms: Raster<T>,
}

/// A pair converted to network units: input as `(2, h, w)` real/imaginary
/// planes divided by the image's max magnitude, target as T2 / `t2_scale_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared<T> {
    pub rows: usize,
    pub cols: usize,
    pub input: Vec<T>,
    pub target: Vec<T>,
}

/// `(1, 2, h, w)` tensor of the max-magnitude normalized image.
pub fn input_tensor<T: Real>(img: &ComplexImage<T>) -> Result<Tensor4<T>> {
    img.expect_domain(Domain::Image)?;
    let (h, w) = (img.grid.rows, img.grid.cols);
    let m = img.max_abs();
    if !(m > T::zero()) {
        return Err(NetError::Core(oled_core::Error::EmptySupport("input image is identically zero".into())));
    }
    let inv = T::one() / m;
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(img.data.iter().map(|z| z.re * inv));
    data.extend(img.data.iter().map(|z| z.im * inv));
    Tensor4::from_vec([1, 2, h, w], data)
}

pub fn prepare<T: Real>(pair: &Pair<T>, t2_scale_ms: f64) -> Result<Prepared<T>> {
    let (rows, cols) = (pair.input.grid.rows, pair.input.grid.cols);
    if pair.t2_ms.rows != rows || pair.t2_ms.cols != cols {
        return Err(NetError::Shape("input image and T2 map differ in shape".into()));
    }
    let inv = T::lit(1.0 / t2_scale_ms);
    Ok(Prepared {
        rows,
        cols,
        input: input_tensor(&pair.input)?.data,
        target: pair.t2_ms.data.iter().map(|&t| t * inv).collect(),
    })
}

impl<T: Real> Prepared<T> {
    pub fn input_tensor(&self) -> Tensor4<T> {
        Tensor4 { dims: [1, 2, self.rows, self.cols], data: self.input.clone() }
    }
    pub fn target_tensor(&self) -> Tensor4<T> {
        Tensor4 { dims: [1, 1, self.rows, self.cols], data: self.target.clone() }
    }
}

/// Draws `batch` random `patch × patch` crops (image chosen uniformly with
/// replacement, then a uniform offset).
pub fn sample_patches<T: Real, R: Rng>(
    data: &[Prepared<T>],
    patch: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if data.is_empty() || batch == 0 || patch == 0 {
        return Err(NetError::Config("patch sampling needs data, batch >= 1 and patch >= 1".into()));
    }
    if let Some(small) = data.iter().find(|d| d.rows < patch || d.cols < patch) {
        return Err(NetError::Shape(format!("patch {patch} larger than a {}x{} image", small.rows, small.cols)));
    }
    let pp = patch * patch;
    let mut x = Tensor4::zeros([batch, 2, patch, patch]);
    let mut y = Tensor4::zeros([batch, 1, patch, patch]);
    for b in 0..batch {
        let d = &data[rng.random_range(0..data.len())];
        let r0 = rng.random_range(0..=d.rows - patch);
        let c0 = rng.random_range(0..=d.cols - patch);
        let hw = d.rows * d.cols;
        for r in 0..patch {
            let src = (r0 + r) * d.cols + c0;
            for ch in 0..2 {
                x.data[(b * 2 + ch) * pp + r * patch..][..patch].copy_from_slice(&d.input[ch * hw + src..][..patch]);
            }
            y.data[b * pp + r * patch..][..patch].copy_from_slice(&d.target[src..][..patch]);
        }
    }
    Ok((x, y))
}
