//! The residual network of stacked conv → BN → ReLU layers.
//!
//! With `L` parameter layers and `X⁰` the input:
//!
//! ```text
//! X¹      = relu(BN(W¹ * X⁰ + b¹))
//! X^{2l}   = relu(BN(W^{2l} * X^{2l-1} + b^{2l}))                 l = 1 … (L-2)/2
//! X^{2l+1} = relu(BN(W^{2l+1} * X^{2l} + b^{2l+1})) + X^{2l-1}
//! Y       = BN(W^L * X^{L-1} + b^L)
//! ```
//!
//! No pooling anywhere, so output height and width equal the input's.

use oled_core::rng::{self, Purpose};
use oled_core::Real;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::gemm::Gemm;
use crate::layers::{relu, relu_backward, BatchNorm, BnCache, Conv2d, ConvCache};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_param_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "two")]
    pub in_channels: usize,
    #[serde(default = "one")]
    pub out_channels: usize,
}

fn two() -> usize {
    2
}
fn one() -> usize {
    1
}

impl NetworkConfig {
    /// 8 layers of 64 3×3 filters.
    pub fn full() -> Self {
        NetworkConfig { n_param_layers: 8, filters: 64, kernel: 3, in_channels: 2, out_channels: 1 }
    }

    /// Same depth with 16 filters, sized for a single CPU core.
    pub fn desk() -> Self {
        NetworkConfig { filters: 16, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_param_layers < 4 || !self.n_param_layers.is_multiple_of(2) {
            return Err(NetError::Config(format!("n_param_layers = {} must be even and >= 4", self.n_param_layers)));
        }
        if self.filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(NetError::Config("filters and channel counts must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(NetError::Config(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    pub fn residual_units(&self) -> usize {
        (self.n_param_layers - 2) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    First,
    /// First layer of a residual unit.
    Inner,
    /// Second layer of a residual unit; adds the unit input after its ReLU.
    Skip,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub layers: Vec<Layer<T>>,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    conv: Vec<ConvCache<T>>,
    bn: Vec<BnCache<T>>,
    /// Post-ReLU, pre-skip output of every layer but the last.
    act: Vec<Tensor4<T>>,
}

/// Parameter gradients in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Gemm> Network<T> {
    /// All weights zero, BN γ = 1, β = 0.
    pub fn zeroed(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let l = config.n_param_layers;
        let layers = (0..l)
            .map(|i| {
                let cin = if i == 0 { config.in_channels } else { config.filters };
                let cout = if i + 1 == l { config.out_channels } else { config.filters };
                Ok(Layer { conv: Conv2d::new(cin, cout, config.kernel)?, bn: BatchNorm::new(cout) })
            })
            .collect::<Result<_>>()?;
        Ok(Network { config: config.clone(), layers })
    }

    /// He initialization: weights `N(0, 2/fan_in)`, biases 0.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = rng::stream(seed, 0, Purpose::Init);
        for layer in &mut net.layers {
            let normal = Normal::new(0.0, (2.0 / layer.conv.fan_in() as f64).sqrt()).expect("positive std");
            for w in &mut layer.conv.w {
                *w = T::lit(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    fn role(&self, i: usize) -> Role {
        let l = self.layers.len();
        if i == 0 {
            Role::First
        } else if i + 1 == l {
            Role::Last
        } else if i % 2 == 1 {
            Role::Inner
        } else {
            Role::Skip
        }
    }

    pub fn n_convs(&self) -> usize {
        self.layers.len()
    }

    pub fn n_residual_units(&self) -> usize {
        (0..self.layers.len()).filter(|&i| self.role(i) == Role::Skip).count()
    }

    /// True once every BN layer has seen a training batch.
    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| l.bn.initialized)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(NetError::Shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        if x.dims[2] < self.config.kernel || x.dims[3] < self.config.kernel {
            return Err(NetError::Shape(format!("input {}x{} smaller than the kernel", x.dims[2], x.dims[3])));
        }
        Ok(())
    }

    /// Training-mode forward (batch statistics; updates running statistics).
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut trace = Trace { conv: Vec::with_capacity(n), bn: Vec::with_capacity(n), act: Vec::with_capacity(n) };
        // acts[i] is the input of layer i
        let mut acts: Vec<Tensor4<T>> = vec![x.clone()];
        for i in 0..n {
            let role = self.role(i);
            let layer = &mut self.layers[i];
            let (z, cc) = layer.conv.forward(&acts[i])?;
            let (y, bc) = layer.bn.forward_train(&z)?;
            trace.conv.push(cc);
            trace.bn.push(bc);
            if role == Role::Last {
                return Ok((y, trace));
            }
            let a = relu(&y);
            let mut out = a.clone();
            if role == Role::Skip {
                add_into(&mut out, &acts[i - 1]);
            }
            trace.act.push(a);
            acts.push(out);
        }
        unreachable!("network has a final layer")
    }

    /// Inference-mode forward using running statistics.
    pub fn forward_inference(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut prev: Option<Tensor4<T>> = None; // unit input for the pending skip
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let layer = &self.layers[i];
            let y = layer.conv.fold_batch_norm(&layer.bn)?.forward_inference(&cur)?;
            match self.role(i) {
                Role::Last => return Ok(y),
                Role::First => {
                    cur = relu(&y);
                }
                Role::Inner => {
                    prev = Some(cur);
                    cur = relu(&y);
                }
                Role::Skip => {
                    let mut out = relu(&y);
                    add_into(&mut out, prev.as_ref().expect("inner layer precedes skip layer"));
                    cur = out;
                }
            }
        }
        unreachable!("network has a final layer")
    }

    /// Gradients of the loss whose output gradient is `dy`, plus the input gradient.
    pub fn backward(&self, trace: &Trace<T>, dy: &Tensor4<T>) -> Result<(Grads<T>, Tensor4<T>)> {
        let n = self.layers.len();
        let mut grads: Vec<Vec<Vec<T>>> = vec![Vec::new(); n];
        // dacts[i]: gradient w.r.t. the input of layer i
        let mut dacts: Vec<Option<Tensor4<T>>> = vec![None; n + 1];
        dacts[n] = Some(dy.clone());
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let dout = dacts[i + 1].take().expect("gradient flows from the output");
            let dy_bn = match self.role(i) {
                Role::Last => dout,
                role => {
                    if role == Role::Skip {
                        accumulate(&mut dacts[i - 1], &dout);
                    }
                    relu_backward(&trace.act[i], &dout)
                }
            };
            let (dz, bg) = layer.bn.backward(&trace.bn[i], &dy_bn)?;
            let (dx, cg) = layer.conv.backward(&trace.conv[i], &dz)?;
            accumulate(&mut dacts[i], &dx);
            grads[i] = vec![cg.dw, cg.db, bg.dgamma, bg.dbeta];
        }
        let dx = dacts[0].take().expect("input gradient");
        Ok((Grads(grads.into_iter().flatten().collect()), dx))
    }

    /// Trainable arrays in a fixed order: per layer `w, b, γ, β`.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| [&l.conv.w[..], &l.conv.b[..], &l.bn.gamma[..], &l.bn.beta[..]]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.conv.w, &mut l.conv.b, &mut l.bn.gamma, &mut l.bn.beta]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Gemm>(&self) -> Network<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Network {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    conv: Conv2d {
                        in_ch: l.conv.in_ch,
                        out_ch: l.conv.out_ch,
                        kernel: l.conv.kernel,
                        w: c(&l.conv.w),
                        b: c(&l.conv.b),
                    },
                    bn: BatchNorm {
                        gamma: c(&l.bn.gamma),
                        beta: c(&l.bn.beta),
                        running_mean: c(&l.bn.running_mean),
                        running_var: c(&l.bn.running_var),
                        initialized: l.bn.initialized,
                    },
                })
                .collect(),
        }
    }
}

fn add_into<T: Real>(dst: &mut Tensor4<T>, src: &Tensor4<T>) {
    dst.data.iter_mut().zip(&src.data).for_each(|(d, &s)| *d += s);
}

fn accumulate<T: Real>(slot: &mut Option<Tensor4<T>>, g: &Tensor4<T>) {
    match slot {
        Some(t) => add_into(t, g),
        None => *slot = Some(g.clone()),
    }
}
