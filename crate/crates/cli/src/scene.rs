//! Evaluation on the brain phantom with optionally perturbed echo shifts.

use oled_core::evalrep::{brain_rois, t2_error_report, RoiSpec, T2ErrorReport};
use oled_core::kspace::{remove_double_echo, GaussianEchoFilter};
use oled_core::phantom::{make_brain_phantom, TissueMap};
use oled_core::seqsim::{add_noise, forward_oled};
use oled_core::{ComplexImage, GridSpec, Raster, SequenceParams};
use oled_net::{infer_t2, Network};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct BrainScene {
    pub grid: GridSpec,
    pub map: TissueMap<f64>,
    pub rois: Vec<RoiSpec>,
    pub nominal: SequenceParams,
}

impl BrainScene {
    pub fn new(size: usize) -> Result<Self> {
        let grid = GridSpec::square(size);
        Ok(BrainScene {
            map: make_brain_phantom(&grid)?,
            rois: brain_rois(&grid),
            nominal: SequenceParams::default_for(&grid),
            grid,
        })
    }

    /// Acquisition with every shift vector scaled by `1 + deviation`,
    /// double-echo removal with the nominal layout.
    pub fn acquire(&self, deviation: f64, snr_db: Option<f64>, noise_seed: u64) -> Result<ComplexImage<f64>> {
        let params = self.nominal.with_shift_scales([1.0 + deviation; 3]);
        let raw = add_noise(&forward_oled(&self.map, &params), snr_db, noise_seed)?;
        Ok(remove_double_echo(&raw, &self.nominal, GaussianEchoFilter::default_sigma(&self.grid))?.image)
    }

    pub fn report(&self, est: &Raster<f64>) -> Result<T2ErrorReport> {
        Ok(t2_error_report(est, &self.map.t2_ms, &self.map.support(), &self.rois)?)
    }

    pub fn evaluate_network(
        &self,
        net: &Network<f32>,
        t2_scale_ms: f64,
        guided_filter: bool,
        deviation: f64,
        snr_db: Option<f64>,
        noise_seed: u64,
    ) -> Result<T2ErrorReport> {
        let img = self.acquire(deviation, snr_db, noise_seed)?.cast::<f32>();
        let est = infer_t2(&img, net, t2_scale_ms, guided_filter)?;
        self.report(&est.cast())
    }
}
