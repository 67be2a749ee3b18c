//! SGD with momentum and L2 weight decay, plus a step learning-rate schedule.

use oled_core::Real;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

/// Piecewise-constant learning rate: `(start_iteration, lr)` pairs with
/// strictly increasing iterations, the first at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self.0.first() {
            Some(&(0, _)) => {}
            _ => return Err(NetError::Config("learning-rate schedule must start at iteration 0".into())),
        }
        if self.0.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(NetError::Config("learning-rate schedule iterations must be strictly increasing".into()));
        }
        if self.0.iter().any(|&(_, lr)| !(lr >= 0.0 && lr.is_finite())) {
            return Err(NetError::Config("learning rates must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn lr(&self, iter: usize) -> f64 {
        self.0.iter().take_while(|&&(start, _)| start <= iter).last().map_or(0.0, |&(_, lr)| lr)
    }

    /// Iterations where the rate changes (excluding 0).
    pub fn boundaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().skip(1).map(|&(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, shapes: &[&[T]]) -> Self {
        Sgd { momentum, weight_decay, velocity: shapes.iter().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    /// `v ← μ v − lr (g + λ w);  w ← w + v` for every array.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(NetError::Shape("parameter, gradient and velocity lists differ in length".into()));
        }
        let (mu, lr, wd) = (T::lit(self.momentum), T::lit(lr), T::lit(self.weight_decay));
        for ((w, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if w.len() != g.len() || w.len() != v.len() {
                return Err(NetError::Shape("parameter and gradient arrays differ in length".into()));
            }
            for i in 0..w.len() {
                v[i] = mu * v[i] - lr * (g[i] + wd * w[i]);
                w[i] += v[i];
            }
        }
        Ok(())
    }
}
