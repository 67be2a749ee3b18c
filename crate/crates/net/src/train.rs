//! The training loop: sample → forward → loss → backward → SGD step.
//!
//! Runs single-threaded with a fixed reduction order, so equal seeds give
//! bit-identical networks.

use oled_core::rng::{self, Purpose};
use serde::{Deserialize, Serialize};

use crate::data::{prepare, sample_patches, Pair, Prepared};
use crate::error::{NetError, Result};
use crate::gemm::Gemm;
use crate::layers::mse_loss;
use crate::network::{Network, NetworkConfig};
use crate::sgd::{LrSchedule, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_iters: usize,
    pub patch: usize,
    pub seed: u64,
    pub t2_scale_ms: f64,
    /// Noise level of the training data (recorded, used by dataset generation).
    pub noise_snr_db: f64,
    /// Echo-shift jitter of the training data (recorded, used by dataset generation).
    pub jitter_frac: f64,
    /// Validation interval in iterations.
    pub val_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale recipe: 3000 iterations, batch 8, 32×32 patches, lr 0.1
    /// divided by 10 at 1k and 2k.
    fn default() -> Self {
        TrainConfig {
            lr_schedule: LrSchedule(vec![(0, 0.1), (1000, 0.01), (2000, 0.001)]),
            momentum: 0.9,
            weight_decay: 1e-8,
            batch: 8,
            max_iters: 3000,
            patch: 32,
            seed: 0,
            t2_scale_ms: 500.0,
            noise_snr_db: 115.3,
            jitter_frac: 0.1,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    /// Full-length recipe: lr 0.1 divided by 10 at 32k and 64k, 100k
    /// iterations, batch 16, 64×64 patches.
    pub fn full() -> Self {
        TrainConfig {
            lr_schedule: LrSchedule(vec![(0, 0.1), (32000, 0.01), (64000, 0.001)]),
            batch: 16,
            max_iters: 100_000,
            patch: 64,
            val_every: 1000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_schedule.validate()?;
        if self.batch == 0 || self.patch == 0 || self.val_every == 0 || self.max_iters == 0 {
            return Err(NetError::Config("batch, patch, max_iters and val_every must be >= 1".into()));
        }
        if !(self.t2_scale_ms > 0.0) {
            return Err(NetError::Config("t2_scale_ms must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(NetError::Config("momentum must lie in [0, 1) and weight_decay be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the training log. `train_loss` is the per-pixel mean squared
/// error of the batch before the step; `val_loss` the per-pixel full-image
/// error on the validation set (inference mode), when measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Hooks into a training run.
pub trait TrainObserver<T> {
    fn on_log(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }
    /// Called at every schedule boundary, at termination, and with the
    /// last state before aborting on divergence.
    fn on_checkpoint(&mut self, _iteration: usize, _net: &Network<T>, _rng_digest: &str) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Quiet;
impl<T> TrainObserver<T> for Quiet {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub log: Vec<LogRow>,
    pub iterations: usize,
    /// `seed:word_position` of the batch sampler after the run.
    pub rng_digest: String,
}

impl<T> TrainOutcome<T> {
    pub fn initial_val_loss(&self) -> Option<f64> {
        self.log.iter().find_map(|r| r.val_loss)
    }
    pub fn final_val_loss(&self) -> Option<f64> {
        self.log.iter().rev().find_map(|r| r.val_loss)
    }
}

/// Mean per-pixel squared error of full-image inference over `val`.
pub fn validation_loss<T: Gemm>(net: &Network<T>, val: &[Prepared<T>]) -> Result<f64> {
    let mut total = 0.0;
    for p in val {
        let pred = net.forward_inference(&p.input_tensor())?;
        let (l, _) = mse_loss(&pred, &p.target_tensor())?;
        total += l / (p.rows * p.cols) as f64;
    }
    Ok(total / val.len() as f64)
}

pub fn train<T: Gemm>(
    train_set: &[Pair<T>],
    val_set: &[Pair<T>],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::Config("training set is empty".into()));
    }
    let train_p: Vec<Prepared<T>> = train_set.iter().map(|p| prepare(p, cfg.t2_scale_ms)).collect::<Result<_>>()?;
    let val_p: Vec<Prepared<T>> = val_set.iter().map(|p| prepare(p, cfg.t2_scale_ms)).collect::<Result<_>>()?;

    let mut net = Network::<T>::init(net_cfg, cfg.seed)?;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay, &net.params());
    let mut batches = rng::stream(cfg.seed, 0, Purpose::Batches);
    let digest = |r: &rand_chacha::ChaCha8Rng| format!("{}:{}", cfg.seed, r.get_word_pos());
    let boundaries: Vec<usize> = cfg.lr_schedule.boundaries().collect();
    let pixels = T::from_usize_lossy(cfg.patch * cfg.patch);
    let mut log = Vec::with_capacity(cfg.max_iters + 1);

    for it in 0..cfg.max_iters {
        let lr = cfg.lr_schedule.lr(it);
        if it > 0 && boundaries.contains(&it) {
            observer.on_checkpoint(it, &net, &digest(&batches))?;
        }
        let (x, y) = sample_patches(&train_p, cfg.patch, cfg.batch, &mut batches)?;
        // the first training forward also primes the BN running statistics
        let (pred, trace) = net.forward_train(&x)?;
        let val_loss =
            if !val_p.is_empty() && it % cfg.val_every == 0 { Some(validation_loss(&net, &val_p)?) } else { None };
        let (loss, mut grad) = mse_loss(&pred, &y)?;
        let loss = loss / (cfg.patch * cfg.patch) as f64;
        let row = LogRow { iteration: it, lr, train_loss: Some(loss), val_loss };
        observer.on_log(&row)?;
        log.push(row);
        if !loss.is_finite() {
            observer.on_checkpoint(it, &net, &digest(&batches))?;
            return Err(NetError::Diverged { iteration: it, loss });
        }
        grad.data.iter_mut().for_each(|g| *g /= pixels);
        let (grads, _) = net.backward(&trace, &grad)?;
        sgd.step(&mut net.params_mut(), &grads.0, lr)?;
    }
    let val_loss = if val_p.is_empty() { None } else { Some(validation_loss(&net, &val_p)?) };
    if let Some(v) = val_loss {
        if !v.is_finite() {
            observer.on_checkpoint(cfg.max_iters, &net, &digest(&batches))?;
            return Err(NetError::Diverged { iteration: cfg.max_iters, loss: v });
        }
    }
    let row = LogRow { iteration: cfg.max_iters, lr: cfg.lr_schedule.lr(cfg.max_iters), train_loss: None, val_loss };
    observer.on_log(&row)?;
    log.push(row);
    let rng_digest = digest(&batches);
    observer.on_checkpoint(cfg.max_iters, &net, &rng_digest)?;
    Ok(TrainOutcome { network: net, log, iterations: cfg.max_iters, rng_digest })
}
