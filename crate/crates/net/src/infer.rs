//! Full-image T2 inference and the guided filter.

use oled_core::{ComplexImage, Raster, Real};

use crate::data::input_tensor;
use crate::error::{NetError, Result};
use crate::gemm::Gemm;
use crate::network::Network;

pub const GUIDED_RADIUS: usize = 15;
pub const GUIDED_EPS: f64 = 1e-4;

/// Box means over `(2r+1)²` windows clipped at the borders, from an
/// integral image.
fn box_mean(v: &[f64], rows: usize, cols: usize, r: usize) -> Vec<f64> {
    let w = cols + 1;
    let mut s = vec![0.0; (rows + 1) * w];
    for y in 0..rows {
        let mut run = 0.0;
        for x in 0..cols {
            run += v[y * cols + x];
            s[(y + 1) * w + x + 1] = s[y * w + x + 1] + run;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(rows));
        for x in 0..cols {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(cols));
            let sum = s[y1 * w + x1] - s[y0 * w + x1] - s[y1 * w + x0] + s[y0 * w + x0];
            out[y * cols + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Guided filter of `p` with guidance `guide`: per-window
/// `a = cov(I, p) / (var(I) + eps)`, `b = mean(p) − a·mean(I)`, output
/// `mean(a)·I + mean(b)`. Windows are clipped at the raster border.
pub fn guided_filter<T: Real>(p: &Raster<T>, guide: &Raster<T>, radius: usize, eps: f64) -> Result<Raster<T>> {
    if !p.same_shape(guide) {
        return Err(NetError::Shape("guided filter input and guide differ in shape".into()));
    }
    if radius == 0 || !(eps > 0.0) {
        return Err(NetError::Config(format!("guided filter needs radius >= 1 and eps > 0, got {radius}, {eps}")));
    }
    let (rows, cols) = (p.rows, p.cols);
    let pi: Vec<f64> = p.data.iter().map(|v| v.as_f64()).collect();
    let ii: Vec<f64> = guide.data.iter().map(|v| v.as_f64()).collect();
    let bm = |v: &[f64]| box_mean(v, rows, cols, radius);
    let mean_i = bm(&ii);
    let mean_p = bm(&pi);
    let corr_ii = bm(&ii.iter().map(|v| v * v).collect::<Vec<_>>());
    let corr_ip = bm(&ii.iter().zip(&pi).map(|(a, b)| a * b).collect::<Vec<_>>());
    let n = rows * cols;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let var = corr_ii[k] - mean_i[k] * mean_i[k];
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + eps);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let (ma, mb) = (bm(&a), bm(&b));
    Raster::from_vec(rows, cols, (0..n).map(|k| T::lit(ma[k] * ii[k] + mb[k])).collect()).map_err(Into::into)
}

/// Full-image inference: normalize, forward in inference mode, rescale by
/// `t2_scale_ms`, optionally self-guided filter (radius 15, ε 1e-4 in
/// network output units).
pub fn infer_t2<T: Gemm>(
    img: &ComplexImage<T>,
    net: &Network<T>,
    t2_scale_ms: f64,
    use_guided_filter: bool,
) -> Result<Raster<T>> {
    if !net.is_initialized() {
        return Err(NetError::Uninitialized);
    }
    let x = input_tensor(img)?;
    let y = net.forward_inference(&x)?;
    let (rows, cols) = (img.grid.rows, img.grid.cols);
    let mut out = Raster::from_vec(rows, cols, y.data)?;
    if use_guided_filter {
        out = guided_filter(&out, &out, GUIDED_RADIUS, GUIDED_EPS)?;
    }
    let s = T::lit(t2_scale_ms);
    Ok(out.map(|v| v * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_fixed_point() {
        let c = Raster::filled(20, 17, 0.37f64);
        let out = guided_filter(&c, &c, 15, 1e-4).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn argument_checks() {
        let a = Raster::filled(8, 8, 1.0f32);
        assert!(guided_filter(&a, &Raster::filled(8, 9, 1.0f32), 2, 1e-4).is_err());
        assert!(guided_filter(&a, &a, 0, 1e-4).is_err());
        assert!(guided_filter(&a, &a, 2, 0.0).is_err());
    }
}
