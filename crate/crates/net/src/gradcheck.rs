//! Central finite-difference checks of every analytic gradient, in f64.
//!
//! Each layer is checked on the scalar `L = Σ r ⊙ f(x)` with a fixed random
//! `r`, the loss on its own value, and the network on the MSE against a
//! random target. Relative error per element is `|a − n| / max(|a|, |n|, 1e-4)`:
//! gradients that vanish analytically (conv biases feeding a batch norm) are
//! thus held to an absolute 1e-8 instead of amplifying finite-difference
//! roundoff.

use oled_core::rng::{self, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::{mse_loss, relu, relu_backward, BatchNorm, Conv2d};
use crate::network::{Network, NetworkConfig};
use crate::tensor::Tensor4;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Conv,
    BatchNorm,
    Relu,
    Mse,
    Network,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::Conv, Target::BatchNorm, Target::Relu, Target::Mse, Target::Network];

    pub fn name(self) -> &'static str {
        match self {
            Target::Conv => "conv",
            Target::BatchNorm => "batch_norm",
            Target::Relu => "relu",
            Target::Mse => "mse",
            Target::Network => "network",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: Target,
    pub seed: u64,
    pub n_checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Max relative error between `analytic` and central differences of `f`,
/// where `f(i, δ)` is the loss with element `i` moved by `δ`.
fn compare(analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64) -> f64 {
    (0..analytic.len())
        .map(|i| {
            let num = (f(i, FD_STEP) - f(i, -FD_STEP)) / (2.0 * FD_STEP);
            rel(analytic[i], num)
        })
        .fold(0.0, f64::max)
}

fn random_tensor(rng: &mut impl Rng, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    let n = dims.iter().product();
    Tensor4 { dims, data: (0..n).map(|_| rng.random_range(lo..hi)).collect() }
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn bump(t: &Tensor4<f64>, i: usize, d: f64) -> Tensor4<f64> {
    let mut t = t.clone();
    t.data[i] += d;
    t
}

pub fn check(target: Target, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng::stream(seed, target as u64, Purpose::Init);
    let (n_checked, max_rel_error) = match target {
        Target::Conv => {
            let dims = [2, 3, 5, 5];
            let mut conv = Conv2d::<f64>::new(3, 4, 3)?;
            conv.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            conv.b.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = random_tensor(&mut rng, dims, -1.0, 1.0);
            let r = random_tensor(&mut rng, [2, 4, 5, 5], -1.0, 1.0);
            let loss = |c: &Conv2d<f64>, x: &Tensor4<f64>| dot(&c.forward_inference(x).unwrap(), &r);
            let (_, cache) = conv.forward(&x)?;
            let (dx, g) = conv.backward(&cache, &r)?;
            let ex = compare(&dx.data, |i, d| loss(&conv, &bump(&x, i, d)));
            let ew = compare(&g.dw, |i, d| {
                let mut c = conv.clone();
                c.w[i] += d;
                loss(&c, &x)
            });
            let eb = compare(&g.db, |i, d| {
                let mut c = conv.clone();
                c.b[i] += d;
                loss(&c, &x)
            });
            (dx.data.len() + g.dw.len() + g.db.len(), ex.max(ew).max(eb))
        }
        Target::BatchNorm => {
            let dims = [3, 2, 4, 4];
            let mut bn = BatchNorm::<f64>::new(2);
            bn.gamma = vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            bn.beta = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = random_tensor(&mut rng, dims, -2.0, 2.0);
            let r = random_tensor(&mut rng, dims, -1.0, 1.0);
            let loss = |b: &BatchNorm<f64>, x: &Tensor4<f64>| dot(&b.clone().forward_train(x).unwrap().0, &r);
            let (_, cache) = bn.clone().forward_train(&x)?;
            let (dx, g) = bn.backward(&cache, &r)?;
            let ex = compare(&dx.data, |i, d| loss(&bn, &bump(&x, i, d)));
            let eg = compare(&g.dgamma, |i, d| {
                let mut b = bn.clone();
                b.gamma[i] += d;
                loss(&b, &x)
            });
            let eb = compare(&g.dbeta, |i, d| {
                let mut b = bn.clone();
                b.beta[i] += d;
                loss(&b, &x)
            });
            (dx.data.len() + 4, ex.max(eg).max(eb))
        }
        Target::Relu => {
            // keep inputs away from the kink at 0
            let mut x = random_tensor(&mut rng, [2, 3, 4, 4], 0.05, 1.0);
            x.data.iter_mut().for_each(|v| {
                if rng.random_bool(0.5) {
                    *v = -*v
                }
            });
            let r = random_tensor(&mut rng, x.dims, -1.0, 1.0);
            let dx = relu_backward(&relu(&x), &r);
            (dx.data.len(), compare(&dx.data, |i, d| dot(&relu(&bump(&x, i, d)), &r)))
        }
        Target::Mse => {
            let p = random_tensor(&mut rng, [3, 1, 4, 4], -1.0, 1.0);
            let t = random_tensor(&mut rng, p.dims, -1.0, 1.0);
            let (_, g) = mse_loss(&p, &t)?;
            (g.data.len(), compare(&g.data, |i, d| mse_loss(&bump(&p, i, d), &t).unwrap().0))
        }
        Target::Network => {
            // 2 residual units of 4 filters
            let cfg = NetworkConfig { n_param_layers: 6, filters: 4, kernel: 3, in_channels: 2, out_channels: 1 };
            let mut net = Network::<f64>::init(&cfg, seed)?;
            for l in &mut net.layers {
                l.conv.b.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
                l.bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                l.bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let x = random_tensor(&mut rng, [2, 2, 6, 6], -1.0, 1.0);
            let t = random_tensor(&mut rng, [2, 1, 6, 6], -1.0, 1.0);
            let loss = |n: &Network<f64>, x: &Tensor4<f64>| {
                let (y, _) = n.clone().forward_train(x).unwrap();
                mse_loss(&y, &t).unwrap().0
            };
            let (y, trace) = net.clone().forward_train(&x)?;
            let (_, dy) = mse_loss(&y, &t)?;
            let (grads, dx) = net.backward(&trace, &dy)?;
            let mut worst = compare(&dx.data, |i, d| loss(&net, &bump(&x, i, d)));
            let mut count = dx.data.len();
            for (j, g) in grads.0.iter().enumerate() {
                count += g.len();
                let e = compare(g, |i, d| {
                    let mut n = net.clone();
                    n.params_mut()[j][i] += d;
                    loss(&n, &x)
                });
                worst = worst.max(e);
            }
            (count, worst)
        }
    };
    Ok(GradCheckReport { target, seed, n_checked, max_rel_error })
}
