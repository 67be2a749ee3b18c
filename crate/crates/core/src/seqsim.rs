//! Three-echo OLED signal model, its isochromat oracle, spin-echo reference
//! images and calibrated complex Gaussian noise.

use num_complex::Complex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Domain, GridSpec, Raster};
use crate::phantom::TissueMap;
use crate::rng::{self, Purpose};
use crate::scalar::Real;

/// One OLED acquisition. Shift vectors are `[x, y]` k-space offsets in
/// cycles per field of view; `snr_db = None` means noiseless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub te1_ms: f64,
    pub te2_ms: f64,
    pub shift1_cyc: [f64; 2],
    pub shift2_cyc: [f64; 2],
    pub shift3_cyc: [f64; 2],
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl SequenceParams {
    /// Default acquisition for a `rows x cols` grid: alpha 45, beta 180,
    /// TE1 22 ms, TE2 68 ms and the maximally separated shift layout
    /// (-N/4, -N/4), (+N/4, +N/4), (0, +N/2).
    pub fn default_for(grid: &GridSpec) -> Self {
        let (nx, ny) = (grid.cols as f64, grid.rows as f64);
        SequenceParams {
            alpha_deg: 45.0,
            beta_deg: 180.0,
            te1_ms: 22.0,
            te2_ms: 68.0,
            shift1_cyc: [-nx / 4.0, -ny / 4.0],
            shift2_cyc: [nx / 4.0, ny / 4.0],
            shift3_cyc: [0.0, ny / 2.0],
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_deg > 0.0 && self.alpha_deg < 180.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 180)", self.alpha_deg)));
        }
        if !(self.beta_deg > 0.0 && self.beta_deg <= 180.0) {
            return Err(Error::Config(format!("beta {} outside (0, 180]", self.beta_deg)));
        }
        if !(self.te1_ms > 0.0 && self.te2_ms > self.te1_ms) {
            return Err(Error::Config(format!("need 0 < TE1 < TE2, got {} / {}", self.te1_ms, self.te2_ms)));
        }
        let s = [self.shift1_cyc, self.shift2_cyc, self.shift3_cyc];
        if s[0] == s[1] || s[0] == s[2] || s[1] == s[2] {
            return Err(Error::Config("echo shift vectors must be pairwise distinct".into()));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::Config("snr_db is NaN".into()));
            }
        }
        Ok(())
    }

    pub fn delta_te_ms(&self) -> f64 {
        self.te2_ms - self.te1_ms
    }

    /// Copy with every shift vector multiplied by its own factor.
    pub fn with_shift_scales(&self, scales: [f64; 3]) -> Self {
        let sc = |v: [f64; 2], s: f64| [v[0] * s, v[1] * s];
        SequenceParams {
            shift1_cyc: sc(self.shift1_cyc, scales[0]),
            shift2_cyc: sc(self.shift2_cyc, scales[1]),
            shift3_cyc: sc(self.shift3_cyc, scales[2]),
            ..self.clone()
        }
    }
}

/// Prefactors of the first spin echo, second spin echo and double spin echo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoAmplitudes {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl EchoAmplitudes {
    pub fn as_array(&self) -> [f64; 3] {
        [self.a1, self.a2, self.a3]
    }
}

/// Closed-form echo prefactors:
/// a1 = ½|sinα cosα|(1−cosβ), a2 = ¼|sinα|(1+cosα)(1−cosβ),
/// a3 = ¼|sinα|(1−cosα)(1−cosβ).
pub fn echo_amplitudes(alpha_deg: f64, beta_deg: f64) -> EchoAmplitudes {
    let (sa, ca) = alpha_deg.to_radians().sin_cos();
    let refocus = 1.0 - beta_deg.to_radians().cos();
    EchoAmplitudes {
        a1: 0.5 * (sa * ca).abs() * refocus,
        a2: 0.25 * sa.abs() * (1.0 + ca) * refocus,
        a3: 0.25 * sa.abs() * (1.0 - ca) * refocus,
    }
}

type Vec3 = [f64; 3];

fn rotate_x(m: &mut Vec3, angle: f64) {
    let (s, c) = angle.sin_cos();
    let (y, z) = (m[1], m[2]);
    m[1] = c * y + s * z;
    m[2] = -s * y + c * z;
}

fn rotate_z(m: &mut Vec3, angle: f64) {
    let (s, c) = angle.sin_cos();
    let (x, y) = (m[0], m[1]);
    m[0] = c * x - s * y;
    m[1] = s * x + c * y;
}

/// Spin ensemble spread uniformly in phase across one voxel.
struct Ensemble {
    spins: Vec<Vec3>,
    theta: Vec<f64>,
}

impl Ensemble {
    fn new(n: usize) -> Self {
        Ensemble {
            spins: vec![[0.0, 0.0, 1.0]; n],
            theta: (0..n).map(|k| std::f64::consts::TAU * k as f64 / n as f64).collect(),
        }
    }
    fn pulse(&mut self, flip: f64) {
        self.spins.iter_mut().for_each(|m| rotate_x(m, flip));
    }
    /// Gradient lobe of `area` dephasing cycles across the voxel.
    fn gradient(&mut self, area: f64) {
        for (m, &t) in self.spins.iter_mut().zip(&self.theta) {
            rotate_z(m, -area * t);
        }
    }
    /// T2 decay of the transverse components (T1 ignored).
    fn relax(&mut self, dt_ms: f64, t2_ms: f64) {
        let e = (-dt_ms / t2_ms).exp();
        self.spins.iter_mut().for_each(|m| {
            m[0] *= e;
            m[1] *= e;
        });
    }
    /// Magnitude of the coherence pathway with net dephasing order `order`.
    fn pathway(&self, order: f64) -> f64 {
        let n = self.spins.len() as f64;
        let sum = self.spins.iter().zip(&self.theta).fold(Complex::new(0.0, 0.0), |acc, (m, &t)| {
            acc + Complex::new(m[0], m[1]) * Complex::from_polar(1.0, -order * t)
        });
        sum.norm() / n
    }
}

// Gradient areas after each pulse. Every pathway of the three-pulse train
// acquires a net order s1*G1 + s2*G2 - G3 with s in {-1, 0, 1}; these
// weights make all such sums distinct.
const G1: f64 = 1.0;
const G2: f64 = 4.0;
const G3: f64 = 16.0;
const ISOCHROMATS: usize = 128;

/// Rotation-matrix simulation of one voxel: α at t=0, α at ΔTE/2, β at
/// TE2/2 with gradient lobes separating the coherence pathways and T2 decay
/// of transverse magnetization. Each echo is read at its own echo time and
/// divided by the decay it actually experienced: `e^{-TE1/T2}` for the first
/// spin echo, `e^{-TE2/T2}` for the second and the double spin echo's full
/// transverse lifetime for the third, so the result is independent of T2.
pub fn simulate_isochromat(
    alpha_deg: f64,
    beta_deg: f64,
    te1_ms: f64,
    te2_ms: f64,
    t2_ms: f64,
) -> Result<EchoAmplitudes> {
    if !(t2_ms > 0.0) {
        return Err(Error::InvalidValue(format!("T2 must be positive, got {t2_ms}")));
    }
    if !(te1_ms > 0.0 && te2_ms > te1_ms) {
        return Err(Error::InvalidValue(format!("need 0 < TE1 < TE2, got {te1_ms} / {te2_ms}")));
    }
    let (alpha, beta) = (alpha_deg.to_radians(), beta_deg.to_radians());
    let tau = 0.5 * (te2_ms - te1_ms);
    let t_refocus = 0.5 * te2_ms;
    let t_echo1 = tau + te1_ms;
    let t_echo2 = te2_ms;

    let mut ens = Ensemble::new(ISOCHROMATS);
    ens.pulse(alpha);
    ens.gradient(G1);
    ens.relax(tau, t2_ms);
    ens.pulse(alpha);
    ens.gradient(G2);
    ens.relax(t_refocus - tau, t2_ms);
    ens.pulse(beta);
    ens.gradient(G3);
    ens.relax(t_echo1 - t_refocus, t2_ms);

    // The refocusing pulse conjugates the phase accrued before it.
    let first = ens.pathway(G2 - G3) / (-(t_echo1 - tau) / t2_ms).exp();
    let double = ens.pathway(G2 - G1 - G3) / (-t_echo1 / t2_ms).exp();
    ens.relax(t_echo2 - t_echo1, t2_ms);
    let second = ens.pathway(G1 + G2 - G3) / (-t_echo2 / t2_ms).exp();
    Ok(EchoAmplitudes { a1: first, a2: second, a3: double })
}

/// Linear phase `2π (sx·x/cols + sy·y/rows)` with pixel coordinates measured
/// from the grid center (`x = c - cols/2`, `y = r - rows/2`).
pub fn phase_ramp<T: Real>(grid: &GridSpec, shift_cyc: [f64; 2]) -> Vec<Complex<T>> {
    let (rows, cols) = (grid.rows, grid.cols);
    let (hr, hc) = ((rows / 2) as f64, (cols / 2) as f64);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let phi = std::f64::consts::TAU
                * (shift_cyc[0] * (c as f64 - hc) / cols as f64 + shift_cyc[1] * (r as f64 - hr) / rows as f64);
            out.push(Complex::new(T::lit(phi.cos()), T::lit(phi.sin())));
        }
    }
    out
}

/// Per-echo weighting used by [`forward_echoes`] to switch individual echoes off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoMask(pub [bool; 3]);

impl EchoMask {
    pub const ALL: EchoMask = EchoMask([true, true, true]);
}

/// Noiseless composite image
/// `x0(r) = Σ_j a_j pd(r) e^{-TE_j/T2(r)} e^{iφ_j(r)}` with the double spin
/// echo evaluated at TE1.
pub fn forward_oled<T: Real>(map: &TissueMap<T>, params: &SequenceParams) -> ComplexImage<T> {
    forward_echoes(map, params, EchoMask::ALL)
}

/// [`forward_oled`] restricted to the echoes enabled in `mask`.
pub fn forward_echoes<T: Real>(map: &TissueMap<T>, params: &SequenceParams, mask: EchoMask) -> ComplexImage<T> {
    let amp = echo_amplitudes(params.alpha_deg, params.beta_deg);
    let grid = map.grid;
    let ramps = [
        phase_ramp::<T>(&grid, params.shift1_cyc),
        phase_ramp::<T>(&grid, params.shift2_cyc),
        phase_ramp::<T>(&grid, params.shift3_cyc),
    ];
    let weights: Vec<(T, T)> = [(amp.a1, params.te1_ms), (amp.a2, params.te2_ms), (amp.a3, params.te1_ms)]
        .iter()
        .zip(mask.0)
        .map(|(&(a, te), on)| (if on { T::lit(a) } else { T::zero() }, T::lit(te)))
        .collect();
    let data = (0..grid.len())
        .map(|i| {
            let (pd, t2) = (map.pd.data[i], map.t2_ms.data[i]);
            if pd <= T::zero() {
                return Complex::new(T::zero(), T::zero());
            }
            let mut z = Complex::new(T::zero(), T::zero());
            for j in 0..3 {
                let (a, te) = weights[j];
                z += ramps[j][i] * (a * pd * (-te / t2).exp());
            }
            z
        })
        .collect();
    ComplexImage { grid, data, domain: Domain::Image }
}

/// Conventional spin-echo reference image `pd e^{-TE/T2}` (real valued).
pub fn forward_se<T: Real>(map: &TissueMap<T>, te_ms: f64) -> Result<ComplexImage<T>> {
    if !(te_ms > 0.0) {
        return Err(Error::InvalidValue(format!("TE must be positive, got {te_ms}")));
    }
    let te = T::lit(te_ms);
    let data = map
        .pd
        .data
        .iter()
        .zip(&map.t2_ms.data)
        .map(|(&pd, &t2)| {
            let v = if pd > T::zero() { pd * (-te / t2).exp() } else { T::zero() };
            Complex::new(v, T::zero())
        })
        .collect();
    Ok(ComplexImage { grid: map.grid, data, domain: Domain::Image })
}

/// Mean magnitude over pixels with nonzero magnitude.
pub fn mean_signal<T: Real>(img: &ComplexImage<T>) -> Option<f64> {
    let (sum, n) =
        img.data.iter().map(|z| z.norm().as_f64()).filter(|&m| m > 0.0).fold((0.0, 0usize), |(s, n), m| (s + m, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-component noise standard deviation for a target SNR in dB.
pub fn noise_sigma(mean_signal: f64, snr_db: f64) -> f64 {
    mean_signal / 10f64.powf(snr_db / 20.0)
}

/// Adds i.i.d. circular complex Gaussian noise whose per-component standard
/// deviation gives `SNR = 20 log10(μs/δn)`, μs being the mean magnitude over
/// pixels with nonzero magnitude. `None` or `+∞` returns the input unchanged.
pub fn add_noise<T: Real>(img: &ComplexImage<T>, snr_db: Option<f64>, seed: u64) -> Result<ComplexImage<T>> {
    img.expect_domain(Domain::Image)?;
    let snr = match snr_db {
        None => return Ok(img.clone()),
        Some(s) if s == f64::INFINITY => return Ok(img.clone()),
        Some(s) if !s.is_finite() => return Err(Error::InvalidValue(format!("snr_db {s} is not finite"))),
        Some(s) => s,
    };
    let mu = mean_signal(img).ok_or_else(|| Error::EmptySupport("image has no signal; SNR undefined".into()))?;
    let sigma = noise_sigma(mu, snr);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidValue(e.to_string()))?;
    let mut rng = rng::stream(seed, 0, Purpose::Noise);
    let data = img
        .data
        .iter()
        .map(|z| {
            let (nr, ni) = (normal.sample(&mut rng), normal.sample(&mut rng));
            Complex::new(z.re + T::lit(nr), z.im + T::lit(ni))
        })
        .collect();
    Ok(ComplexImage { grid: img.grid, data, domain: Domain::Image })
}

/// Measured SNR (dB) of `noisy` against its clean source, with the noise
/// standard deviation re-estimated from the residual.
pub fn measured_snr_db<T: Real>(clean: &ComplexImage<T>, noisy: &ComplexImage<T>) -> Option<f64> {
    let mu = mean_signal(clean)?;
    let n = clean.data.len() as f64;
    let var = clean
        .data
        .iter()
        .zip(&noisy.data)
        .map(|(a, b)| {
            let d = b - a;
            d.re.as_f64().powi(2) + d.im.as_f64().powi(2)
        })
        .sum::<f64>()
        / (2.0 * n);
    (var > 0.0).then(|| 20.0 * (mu / var.sqrt()).log10())
}

/// Magnitude of a real-valued reference image as a raster.
pub fn se_magnitude<T: Real>(img: &ComplexImage<T>) -> Raster<T> {
    img.magnitude()
}
