//! Convolution, batch normalization, ReLU and the MSE loss, each with an
//! exact analytic backward pass.

use oled_core::Real;

use crate::error::{NetError, Result};
use crate::gemm::{gemm, Gemm};
use crate::tensor::Tensor4;

/// Same-padded 2-D cross-correlation with weights `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Saved by [`Conv2d::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    dims: [usize; 4],
    cols: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

impl<T: Gemm> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) || in_ch == 0 || out_ch == 0 {
            return Err(NetError::Config(format!("conv {in_ch}->{out_ch} with kernel {kernel}: kernel must be odd")));
        }
        Ok(Conv2d {
            in_ch,
            out_ch,
            kernel,
            w: vec![T::zero(); out_ch * in_ch * kernel * kernel],
            b: vec![T::zero(); out_ch],
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(NetError::Shape(format!("conv expects {} input channels, got {}", self.in_ch, x.channels())));
        }
        if self.w.len() != self.out_ch * self.fan_in() || self.b.len() != self.out_ch {
            return Err(NetError::Shape("conv parameter lengths do not match its shape".into()));
        }
        Ok(())
    }

    /// Unfolds one `(c, h, w)` item into a `(c·k·k, h·w)` patch matrix.
    fn im2col(&self, x: &[T], h: usize, w: usize, col: &mut [T]) {
        let k = self.kernel;
        let p = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_ch {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - p;
                    let dx = kx as isize - p;
                    // output columns [x0, x1) read source columns shifted by dx
                    let x0 = (-dx).clamp(0, w as isize) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        out[..x0].fill(T::zero());
                        out[x0..x1].copy_from_slice(&src[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize]);
                        out[x1..].fill(T::zero());
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, dx: &mut [T]) {
        let k = self.kernel;
        let p = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                    let (dy, ddx) = (ky as isize - p, kx as isize - p);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for x in 0..w {
                            let sx = x as isize + ddx;
                            if sx >= 0 && sx < w as isize {
                                dst[sx as usize] += row[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvCache<T>)> {
        self.check_input(x)?;
        let [bsz, _, h, w] = x.dims;
        let hw = h * w;
        let kk = self.fan_in();
        let mut y = Tensor4::zeros([bsz, self.out_ch, h, w]);
        let mut cols = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let mut col = vec![T::zero(); kk * hw];
            self.im2col(x.item(b), h, w, &mut col);
            let out = y.item_mut(b);
            for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
                chunk.fill(self.b[o]);
            }
            gemm(false, false, self.out_ch, hw, kk, T::one(), &self.w, &col, T::one(), out);
            cols.push(col);
        }
        Ok((y, ConvCache { dims: x.dims, cols }))
    }

    /// Forward pass without keeping the patch matrices.
    pub fn forward_inference(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let [bsz, _, h, w] = x.dims;
        let hw = h * w;
        let mut y = Tensor4::zeros([bsz, self.out_ch, h, w]);
        let mut col = vec![T::zero(); self.fan_in() * hw];
        for b in 0..bsz {
            self.im2col(x.item(b), h, w, &mut col);
            let out = y.item_mut(b);
            for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
                chunk.fill(self.b[o]);
            }
            gemm(false, false, self.out_ch, hw, self.fan_in(), T::one(), &self.w, &col, T::one(), out);
        }
        Ok(y)
    }

    /// This convolution followed by `bn` in inference mode, as one convolution.
    pub fn fold_batch_norm(&self, bn: &BatchNorm<T>) -> Result<Conv2d<T>> {
        if bn.channels() != self.out_ch {
            return Err(NetError::Shape(format!(
                "batch norm over {} channels after {} conv outputs",
                bn.channels(),
                self.out_ch
            )));
        }
        if !bn.initialized {
            return Err(NetError::Uninitialized);
        }
        let eps = T::lit(BN_EPS);
        let mut folded = self.clone();
        for o in 0..self.out_ch {
            let scale = bn.gamma[o] / (bn.running_var[o] + eps).sqrt();
            folded.w[o * self.fan_in()..(o + 1) * self.fan_in()].iter_mut().for_each(|w| *w *= scale);
            folded.b[o] = (self.b[o] - bn.running_mean[o]) * scale + bn.beta[o];
        }
        Ok(folded)
    }

    /// Returns `(dx, grads)` for upstream gradient `dy`.
    pub fn backward(&self, cache: &ConvCache<T>, dy: &Tensor4<T>) -> Result<(Tensor4<T>, ConvGrads<T>)> {
        let [bsz, _, h, w] = cache.dims;
        dy.expect_dims([bsz, self.out_ch, h, w], "conv upstream gradient")?;
        let hw = h * w;
        let kk = self.fan_in();
        let mut dw = vec![T::zero(); self.w.len()];
        let mut db = vec![T::zero(); self.out_ch];
        let mut dx = Tensor4::zeros(cache.dims);
        let mut dcol = vec![T::zero(); kk * hw];
        for b in 0..bsz {
            let g = dy.item(b);
            for (o, chunk) in g.chunks_exact(hw).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
            gemm(false, true, self.out_ch, kk, hw, T::one(), g, &cache.cols[b], T::one(), &mut dw);
            gemm(true, false, kk, hw, self.out_ch, T::one(), &self.w, g, T::zero(), &mut dcol);
            self.col2im(&dcol, h, w, dx.item_mut(b));
        }
        Ok((dx, ConvGrads { dw, db }))
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Per-channel batch normalization. Running variance is the unbiased batch
/// variance; the first training batch sets the running statistics directly.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub initialized: bool,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(NetError::Shape(format!("batch norm over {} channels got {}", self.channels(), x.channels())));
        }
        Ok(())
    }

    /// Training-mode forward: normalizes with batch statistics and updates
    /// the running statistics.
    #[allow(clippy::needless_range_loop)] // c indexes every per-channel array
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        let [bsz, ch, _, _] = x.dims;
        let hw = x.plane();
        let n = bsz * hw;
        let nt = T::from_usize_lossy(n);
        let eps = T::lit(BN_EPS);
        let mut y = Tensor4::zeros(x.dims);
        let mut xhat = Tensor4::zeros(x.dims);
        let mut inv_std = vec![T::zero(); ch];
        let m = T::lit(BN_MOMENTUM);
        for c in 0..ch {
            let chan = |b: usize| &x.data[(b * ch + c) * hw..(b * ch + c + 1) * hw];
            let mean = (0..bsz).map(|b| chan(b).iter().copied().sum::<T>()).sum::<T>() / nt;
            let ss = (0..bsz).map(|b| chan(b).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>()).sum::<T>();
            let var = ss / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[c] = is;
            for b in 0..bsz {
                let off = (b * ch + c) * hw;
                for i in off..off + hw {
                    let xh = (x.data[i] - mean) * is;
                    xhat.data[i] = xh;
                    y.data[i] = self.gamma[c] * xh + self.beta[c];
                }
            }
            let unbiased = if n > 1 { ss / T::from_usize_lossy(n - 1) } else { var };
            if self.initialized {
                self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * mean;
                self.running_var[c] = (T::one() - m) * self.running_var[c] + m * unbiased;
            } else {
                self.running_mean[c] = mean;
                self.running_var[c] = unbiased;
            }
        }
        self.initialized = true;
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_inference(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        if !self.initialized {
            return Err(NetError::Uninitialized);
        }
        let ch = x.channels();
        let hw = x.plane();
        let eps = T::lit(BN_EPS);
        let scale: Vec<T> = (0..ch).map(|c| self.gamma[c] / (self.running_var[c] + eps).sqrt()).collect();
        let mut y = x.clone();
        for (i, chunk) in y.data.chunks_exact_mut(hw).enumerate() {
            let c = i % ch;
            for v in chunk {
                *v = (*v - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Ok(y)
    }

    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor4<T>) -> Result<(Tensor4<T>, BnGrads<T>)> {
        dy.expect_dims(cache.xhat.dims, "batch norm upstream gradient")?;
        let [bsz, ch, _, _] = dy.dims;
        let hw = dy.plane();
        let nt = T::from_usize_lossy(bsz * hw);
        let mut dx = Tensor4::zeros(dy.dims);
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for c in 0..ch {
            let (mut sdy, mut sdyx) = (T::zero(), T::zero());
            for b in 0..bsz {
                let off = (b * ch + c) * hw;
                for i in off..off + hw {
                    sdy += dy.data[i];
                    sdyx += dy.data[i] * cache.xhat.data[i];
                }
            }
            dgamma[c] = sdyx;
            dbeta[c] = sdy;
            let k = self.gamma[c] * cache.inv_std[c] / nt;
            for b in 0..bsz {
                let off = (b * ch + c) * hw;
                for i in off..off + hw {
                    dx.data[i] = k * (nt * dy.data[i] - sdy - cache.xhat.data[i] * sdyx);
                }
            }
        }
        Ok((dx, BnGrads { dgamma, dbeta }))
    }
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given the layer's output `y`.
pub fn relu_backward<T: Real>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    Tensor4 {
        dims: dy.dims,
        data: y.data.iter().zip(&dy.data).map(|(&o, &g)| if o > T::zero() { g } else { T::zero() }).collect(),
    }
}

/// `(1/N) Σ_i ‖pred_i − target_i‖²_F` over the batch, with its gradient.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    target.expect_dims(pred.dims, "loss target")?;
    let n = T::from_usize_lossy(pred.batch());
    let two_over_n = T::lit(2.0) / n;
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(pred.dims);
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        loss += (d * d).as_f64();
        grad.data[i] = two_over_n * d;
    }
    Ok((loss / pred.batch() as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let mut conv = Conv2d::<f64>::new(1, 1, 1).unwrap();
        conv.w[0] = 1.0;
        let x = Tensor4::from_vec([2, 1, 3, 4], (0..24).map(|v| v as f64 * 0.5).collect()).unwrap();
        assert_eq!(conv.forward(&x).unwrap().0, x);
        assert_eq!(conv.forward_inference(&x).unwrap(), x);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        assert!(Conv2d::<f32>::new(2, 3, 4).is_err());
        let conv = Conv2d::<f32>::new(2, 3, 3).unwrap();
        assert!(conv.forward(&Tensor4::zeros([1, 3, 5, 5])).is_err());
    }

    #[test]
    fn bn_constant_channel_goes_to_zero() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor4::from_vec([2, 1, 2, 2], vec![3.0; 8]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!(y.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bn_affine_sets_moments() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = vec![2.0, 2.0];
        bn.beta = vec![3.0, 3.0];
        let x = Tensor4::from_vec([3, 2, 2, 2], (0..24).map(|v| ((v * 7) % 11) as f64).collect()).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> =
                (0..3).flat_map(|b| (0..4).map(move |i| (b, i))).map(|(b, i)| y.data[(b * 2 + c) * 4 + i]).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0).sqrt();
            assert!((mean - 3.0).abs() < 1e-12);
            assert!((std - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn bn_inference_requires_training_step() {
        let mut bn = BatchNorm::<f32>::new(1);
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(bn.forward_inference(&x), Err(NetError::Uninitialized)));
        bn.forward_train(&x).unwrap();
        assert_eq!(bn.running_mean[0], 2.5);
        assert!((bn.running_var[0] - 5.0 / 3.0).abs() < 1e-6);
        let x2 = x.map(|v| v + 1.0);
        bn.forward_train(&x2).unwrap();
        assert!((bn.running_mean[0] - (0.9 * 2.5 + 0.1 * 3.5)).abs() < 1e-6);
        assert!(bn.forward_inference(&x).is_ok());
    }

    #[test]
    fn mse_hand_values() {
        let p = Tensor4::from_vec([1, 1, 1, 1], vec![5.0f64]).unwrap();
        let t = Tensor4::from_vec([1, 1, 1, 1], vec![2.0f64]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.data[0], 6.0);
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        assert!(mse_loss(&p, &Tensor4::zeros([2, 1, 1, 1])).is_err());
    }
}
