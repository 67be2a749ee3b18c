//! Simulated training pairs. Sample `i` depends only on `(seed, i)`:
//! its template seed, jitter draws and noise seed come from separate
//! streams of the root seed.

use oled_core::kspace::{remove_double_echo, GaussianEchoFilter};
use oled_core::phantom::{make_random_phantom, TissueMap};
use oled_core::rng::{stream, Purpose};
use oled_core::seqsim::{add_noise, forward_oled};
use oled_core::{ComplexImage, SequenceParams};
use oled_net::Pair;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::DatasetConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub index: usize,
    pub phantom_seed: u64,
    pub noise_seed: u64,
    /// Per-echo shift scale factors that were applied.
    pub jitter: [f64; 3],
    /// Acquisition actually simulated (jittered shifts, noise level).
    pub params: SequenceParams,
    pub map: TissueMap<f64>,
    /// Double-echo-removed image, filtered with the nominal shift layout.
    pub image: ComplexImage<f64>,
    pub overlap_warning: bool,
}

impl Sample {
    /// The pair at storage precision, identical to what a reload of the
    /// written files yields.
    pub fn pair(&self) -> Pair<f32> {
        Pair { input: self.image.cast(), t2_ms: self.map.t2_ms.cast() }
    }
}

pub fn jitter_scales(seed: u64, index: usize, jitter_frac: f64) -> [f64; 3] {
    if jitter_frac == 0.0 {
        return [1.0; 3];
    }
    let mut rng = stream(seed, index as u64, Purpose::Jitter);
    std::array::from_fn(|_| 1.0 + rng.random_range(-jitter_frac..=jitter_frac))
}

pub fn synth_sample(cfg: &DatasetConfig, index: usize) -> Result<Sample> {
    let grid = cfg.grid()?;
    let nominal = cfg.nominal_params()?;
    let phantom_seed: u64 = stream(cfg.seed, index as u64, Purpose::Phantom).random();
    let noise_seed: u64 = stream(cfg.seed, index as u64, Purpose::Noise).random();
    let template = oled_core::phantom::RandomTemplateSpec { seed: phantom_seed, ..cfg.template.clone() };
    let map = make_random_phantom::<f64>(&template, &grid)?;

    let jitter = jitter_scales(cfg.seed, index, cfg.jitter_frac);
    let params = SequenceParams { snr_db: cfg.snr(), ..nominal.with_shift_scales(jitter) };
    let raw = add_noise(&forward_oled(&map, &params), params.snr_db, noise_seed)?;
    let sigma = cfg.filter_sigma_cyc.unwrap_or_else(|| GaussianEchoFilter::default_sigma(&grid));
    let removal = remove_double_echo(&raw, &nominal, sigma)?;
    Ok(Sample {
        index,
        phantom_seed,
        noise_seed,
        jitter,
        params,
        map,
        image: removal.image,
        overlap_warning: removal.overlap_warning,
    })
}

/// Train/test assignment: a seeded shuffle of the indices, the first
/// `round(count · train_fraction)` of which train.
pub fn split_assignment(cfg: &DatasetConfig) -> Vec<Split> {
    let mut order: Vec<usize> = (0..cfg.count).collect();
    order.shuffle(&mut stream(cfg.seed, 0, Purpose::Split));
    let n_train = (cfg.count as f64 * cfg.train_fraction).round() as usize;
    let mut out = vec![Split::Test; cfg.count];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

/// In-memory dataset: all samples and their split.
pub fn synth_dataset(cfg: &DatasetConfig) -> Result<Vec<(Sample, Split)>> {
    cfg.validate()?;
    let split = split_assignment(cfg);
    (0..cfg.count).map(|i| Ok((synth_sample(cfg, i)?, split[i]))).collect()
}

pub fn pairs_of(samples: &[(Sample, Split)], which: Split) -> Vec<Pair<f32>> {
    samples.iter().filter(|(_, s)| *s == which).map(|(x, _)| x.pair()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DatasetConfig {
        toml::from_str("seed = 5\ncount = 10\nrows = 16\ncols = 16\n").unwrap()
    }

    #[test]
    fn split_matches_fraction() {
        let s = split_assignment(&cfg());
        assert_eq!(s.iter().filter(|x| **x == Split::Train).count(), 9);
        assert_eq!(s, split_assignment(&cfg()));
    }

    #[test]
    fn zero_jitter_keeps_nominal_shifts() {
        let c = DatasetConfig { jitter_frac: 0.0, ..cfg() };
        let a = synth_sample(&c, 0).unwrap();
        let b = synth_sample(&c, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.jitter, [1.0; 3]);
    }

    #[test]
    fn jitter_stays_in_band() {
        for i in 0..20 {
            for s in jitter_scales(9, i, 0.1) {
                assert!((0.9..=1.1).contains(&s));
            }
        }
        assert_ne!(jitter_scales(9, 0, 0.1), jitter_scales(9, 1, 0.1));
    }

    #[test]
    fn samples_do_not_depend_on_neighbours() {
        let c = cfg();
        let whole = synth_dataset(&c).unwrap();
        let alone = synth_sample(&c, 7).unwrap();
        assert_eq!(whole[7].0.image, alone.image);
        assert_eq!(whole[7].0.map, alone.map);
    }
}
