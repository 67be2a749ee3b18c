//! Echo detachment: separates the two overlapped spin-echo images by
//! minimizing
//!
//! ```text
//! ‖x0 − x1·e^{iφ1} − x2·e^{iφ2}‖² + λ1‖M∇x1‖₁ + λ2‖M∇x2‖₁ + λ3‖M∇(x1 − κx2)‖₁
//! ```
//!
//! and converts the separated magnitudes into a T2 map.
//!
//! The ℓ1 terms are anisotropic complex TV (modulus of the complex forward
//! difference along each axis) with a Charbonnier floor `sqrt(|t|² + ε²) − ε`,
//! ε being `smoothing · ‖x0‖∞`. The solver is majorize–minimize: every outer
//! iteration replaces each penalty by its tangent quadratic at the current
//! iterate and decreases that majorizer with warm-started block-Jacobi
//! preconditioned conjugate gradients. Since CG started from the current
//! iterate can only lower the majorizer, and the majorizer touches the
//! objective there, the recorded objective never increases.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_blur, ComplexImage, Domain, GridSpec, Raster};
use crate::scalar::Real;
use crate::seqsim::{echo_amplitudes, phase_ramp, EchoAmplitudes, SequenceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum KappaMode {
    Fixed(f64),
    /// Proposes `median|x1| / median|x2|` every outer iteration; a proposal is
    /// kept only if it does not raise the objective.
    MedianRatio,
}

/// Solver settings. `lambda*` and `edge_sigma` are fractions of `‖x0‖∞`, so
/// the solution scales linearly with the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetachParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub kappa_mode: KappaMode,
    pub edge_sigma: f64,
    pub max_outer_iters: usize,
    pub pd_threshold: f64,
    pub tol: f64,
    /// CG iterations per outer iteration.
    pub cg_iters: usize,
    /// Charbonnier ε as a fraction of `‖x0‖∞`.
    pub smoothing: f64,
}

impl Default for DetachParams {
    fn default() -> Self {
        DetachParams {
            lambda1: 5e-3,
            lambda2: 5e-3,
            lambda3: 1e-2,
            kappa_mode: KappaMode::MedianRatio,
            edge_sigma: 0.05,
            max_outer_iters: 400,
            pd_threshold: 0.05,
            tol: 1e-5,
            cg_iters: 8,
            smoothing: 1e-3,
        }
    }
}

impl DetachParams {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("lambdas must be nonnegative".into()));
        }
        if self.max_outer_iters < 1 || self.cg_iters < 1 {
            return Err(Error::Config("max_outer_iters and cg_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0 && self.edge_sigma > 0.0 && self.smoothing > 0.0) {
            return Err(Error::Config("tol, edge_sigma and smoothing must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pd_threshold) {
            return Err(Error::Config("pd_threshold outside [0, 1]".into()));
        }
        if let KappaMode::Fixed(k) = self.kappa_mode {
            if !k.is_finite() {
                return Err(Error::Config("fixed kappa must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DetachResult<T> {
    /// Demodulated first-echo image.
    pub x1: ComplexImage<T>,
    /// Demodulated second-echo image.
    pub x2: ComplexImage<T>,
    /// Objective after initialization and after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub t2_ms: Raster<T>,
    pub mask: Raster<bool>,
    pub kappa: f64,
    pub iterations: usize,
    /// False when `max_outer_iters` ran out before the relative objective
    /// change fell below `tol`.
    pub converged: bool,
}

/// `M(r) = 1 / (1 + |∇ s(r)| / edge_sigma)` where `s` is `|x0|` blurred
/// with a unit-σ Gaussian (which also flattens the two-pixel interference
/// streaks of the overlapped echoes).
pub fn edge_weight_matrix<T: Real>(x0: &ComplexImage<T>, edge_sigma: f64) -> Result<Raster<T>> {
    x0.expect_domain(Domain::Image)?;
    if !(edge_sigma > 0.0) {
        return Err(Error::InvalidValue(format!("edge_sigma must be positive, got {edge_sigma}")));
    }
    let smooth = gaussian_blur(&x0.magnitude(), 1.0);
    Ok(edge_weights_from(&smooth, edge_sigma))
}

pub(crate) fn edge_weights_from<T: Real>(s: &Raster<T>, edge_sigma: f64) -> Raster<T> {
    let (rows, cols) = (s.rows, s.cols);
    let es = T::lit(edge_sigma);
    Raster::from_fn(rows, cols, |r, c| {
        let gx = if c + 1 < cols { s.get(r, c + 1) - s.get(r, c) } else { T::zero() };
        let gy = if r + 1 < rows { s.get(r + 1, c) - s.get(r, c) } else { T::zero() };
        T::one() / (T::one() + (gx * gx + gy * gy).sqrt() / es)
    })
}

/// `median|x1| / median|x2|` over pixels where both exceed 5% of their own
/// maximum.
pub fn kappa_estimate<T: Real>(x1: &ComplexImage<T>, x2: &ComplexImage<T>) -> Result<f64> {
    if x1.grid.len() != x2.grid.len() {
        return Err(Error::Shape("kappa estimate needs images on the same grid".into()));
    }
    let m1 = x1.magnitude();
    let m2 = x2.magnitude();
    let (t1, t2) = (m1.max_value() * T::lit(0.05), m2.max_value() * T::lit(0.05));
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = m1
        .data
        .iter()
        .zip(&m2.data)
        .filter(|(&u, &v)| u > t1 && v > t2 && v > T::zero())
        .map(|(&u, &v)| (u.as_f64(), v.as_f64()))
        .unzip();
    if a.is_empty() {
        return Err(Error::EmptySupport("no joint support for kappa estimate".into()));
    }
    Ok(median(&mut a) / median(&mut b))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// T2 from the separated echoes:
/// `T2 = (TE2 − TE1) / ln[(|x1|/a1) / (|x2|/a2)]` on pixels where `|x1|`
/// exceeds `pd_threshold · max|x1|` and the log argument is a finite value
/// above 1. Results are clamped to [1, 5000] ms; other pixels get 0 and are
/// left out of the mask.
pub fn t2_from_echoes<T: Real>(
    x1: &ComplexImage<T>,
    x2: &ComplexImage<T>,
    amp: &EchoAmplitudes,
    te1_ms: f64,
    te2_ms: f64,
    pd_threshold: f64,
) -> (Raster<T>, Raster<bool>) {
    let (rows, cols) = (x1.grid.rows, x1.grid.cols);
    let mut t2 = Raster::zeros(rows, cols);
    let mut mask = Raster::filled(rows, cols, false);
    if !(amp.a1 > 0.0 && amp.a2 > 0.0 && te2_ms > te1_ms) {
        return (t2, mask);
    }
    let m1 = x1.magnitude();
    let m2 = x2.magnitude();
    let thresh = m1.max_value().as_f64() * pd_threshold;
    let dte = te2_ms - te1_ms;
    for i in 0..rows * cols {
        let (u, v) = (m1.data[i].as_f64(), m2.data[i].as_f64());
        if !(u > thresh) || !(u > 0.0) {
            continue;
        }
        let ratio = (u / amp.a1) / (v / amp.a2);
        if ratio.is_finite() && ratio > 1.0 {
            let val = (dte / ratio.ln()).clamp(1.0, 5000.0);
            t2.data[i] = T::lit(val);
            mask.data[i] = true;
        }
    }
    (t2, mask)
}

type Field<T> = Vec<Complex<T>>;

#[inline]
fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Forward differences with a zero last difference (reflective boundary).
fn grad<T: Real>(u: &[Complex<T>], rows: usize, cols: usize, gx: &mut [Complex<T>], gy: &mut [Complex<T>]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            gx[i] = if c + 1 < cols { u[i + 1] - u[i] } else { czero() };
            gy[i] = if r + 1 < rows { u[i + cols] - u[i] } else { czero() };
        }
    }
}

/// Adds `Dxᵀ(wx·gx) + Dyᵀ(wy·gy)` into `out` with `g = D u` recomputed inline.
fn add_weighted_laplacian<T: Real>(
    u: &[Complex<T>],
    wx: &[T],
    wy: &[T],
    rows: usize,
    cols: usize,
    scale: T,
    out: &mut [Complex<T>],
) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                let f = (u[i + 1] - u[i]) * (wx[i] * scale);
                out[i] -= f;
                out[i + 1] += f;
            }
            if r + 1 < rows {
                let f = (u[i + cols] - u[i]) * (wy[i] * scale);
                out[i] -= f;
                out[i + cols] += f;
            }
        }
    }
}

struct Problem<T> {
    rows: usize,
    cols: usize,
    x0: Field<T>,
    p1: Field<T>,
    p2: Field<T>,
    m: Vec<T>,
    lambdas: [T; 3],
    eps: T,
}

impl<T: Real> Problem<T> {
    fn n(&self) -> usize {
        self.rows * self.cols
    }

    fn combo(&self, z1: &[Complex<T>], z2: &[Complex<T>], kappa: T) -> Field<T> {
        z1.iter().zip(z2).map(|(a, b)| a - b * kappa).collect()
    }

    fn data_term(&self, z1: &[Complex<T>], z2: &[Complex<T>]) -> f64 {
        (0..self.n()).map(|i| (self.x0[i] - self.p1[i] * z1[i] - self.p2[i] * z2[i]).norm_sqr().as_f64()).sum()
    }

    fn tv(&self, u: &[Complex<T>]) -> f64 {
        let (rows, cols) = (self.rows, self.cols);
        let eps = self.eps;
        let rho = |t: Complex<T>| ((t.norm_sqr() + eps * eps).sqrt() - eps).as_f64();
        let mut acc = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let mut s = 0.0;
                if c + 1 < cols {
                    s += rho(u[i + 1] - u[i]);
                }
                if r + 1 < rows {
                    s += rho(u[i + cols] - u[i]);
                }
                acc += self.m[i].as_f64() * s;
            }
        }
        acc
    }

    fn objective(&self, z1: &[Complex<T>], z2: &[Complex<T>], kappa: T) -> f64 {
        let [l1, l2, l3] = self.lambdas;
        let mut f = self.data_term(z1, z2);
        if l1 > T::zero() {
            f += l1.as_f64() * self.tv(z1);
        }
        if l2 > T::zero() {
            f += l2.as_f64() * self.tv(z2);
        }
        if l3 > T::zero() {
            f += l3.as_f64() * self.tv(&self.combo(z1, z2, kappa));
        }
        f
    }

    /// Majorizer weights `λ M / (2 sqrt(|D u|² + ε²))` per axis.
    fn weights(&self, u: &[Complex<T>], lambda: T) -> (Vec<T>, Vec<T>) {
        let n = self.n();
        let mut gx = vec![czero(); n];
        let mut gy = vec![czero(); n];
        grad(u, self.rows, self.cols, &mut gx, &mut gy);
        let half = T::lit(0.5);
        let e2 = self.eps * self.eps;
        let w = |g: &Complex<T>, m: T| lambda * m * half / (g.norm_sqr() + e2).sqrt();
        let wx = gx.iter().zip(&self.m).map(|(g, &m)| w(g, m)).collect();
        let wy = gy.iter().zip(&self.m).map(|(g, &m)| w(g, m)).collect();
        (wx, wy)
    }
}

struct Majorizer<T> {
    w: [(Vec<T>, Vec<T>); 3],
    kappa: T,
}

impl<T: Real> Majorizer<T> {
    /// `H z` for the quadratic `AᴴA + Σ K_kᴴ Dᵀ W_k D K_k`.
    fn apply(
        &self,
        p: &Problem<T>,
        z1: &[Complex<T>],
        z2: &[Complex<T>],
        o1: &mut [Complex<T>],
        o2: &mut [Complex<T>],
    ) {
        let n = p.n();
        for i in 0..n {
            let a = p.p1[i] * z1[i] + p.p2[i] * z2[i];
            o1[i] = p.p1[i].conj() * a;
            o2[i] = p.p2[i].conj() * a;
        }
        let (rows, cols) = (p.rows, p.cols);
        let one = T::one();
        add_weighted_laplacian(z1, &self.w[0].0, &self.w[0].1, rows, cols, one, o1);
        add_weighted_laplacian(z2, &self.w[1].0, &self.w[1].1, rows, cols, one, o2);
        if p.lambdas[2] > T::zero() {
            let u = p.combo(z1, z2, self.kappa);
            let mut g = vec![czero(); n];
            add_weighted_laplacian(&u, &self.w[2].0, &self.w[2].1, rows, cols, one, &mut g);
            for i in 0..n {
                o1[i] += g[i];
                o2[i] -= g[i] * self.kappa;
            }
        }
    }

    /// Per-pixel 2x2 diagonal blocks of H, inverted.
    fn block_inverse(&self, p: &Problem<T>) -> Vec<[Complex<T>; 4]> {
        let (rows, cols) = (p.rows, p.cols);
        let diag = |w: &(Vec<T>, Vec<T>), r: usize, c: usize| {
            let i = r * cols + c;
            let mut d = T::zero();
            if c + 1 < cols {
                d += w.0[i];
            }
            if c > 0 {
                d += w.0[i - 1];
            }
            if r + 1 < rows {
                d += w.1[i];
            }
            if r > 0 {
                d += w.1[i - cols];
            }
            d
        };
        let k = self.kappa;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let d1 = diag(&self.w[0], r, c);
                let d2 = diag(&self.w[1], r, c);
                let d3 = if p.lambdas[2] > T::zero() { diag(&self.w[2], r, c) } else { T::zero() };
                let a = T::one() + d1 + d3;
                let dd = T::one() + d2 + k * k * d3;
                let b = p.p1[i].conj() * p.p2[i] - Complex::new(k * d3, T::zero());
                let det = a * dd - b.norm_sqr();
                let inv = T::one() / det;
                out.push([
                    Complex::new(dd * inv, T::zero()),
                    -b * inv,
                    -b.conj() * inv,
                    Complex::new(a * inv, T::zero()),
                ]);
            }
        }
        out
    }
}

fn dot<T: Real>(a1: &[Complex<T>], a2: &[Complex<T>], b1: &[Complex<T>], b2: &[Complex<T>]) -> T {
    let mut s = T::zero();
    for i in 0..a1.len() {
        s += (a1[i].conj() * b1[i]).re + (a2[i].conj() * b2[i]).re;
    }
    s
}

/// Preconditioned CG on `H z = b`, warm-started at `z`.
fn pcg<T: Real>(
    p: &Problem<T>,
    maj: &Majorizer<T>,
    b: (&[Complex<T>], &[Complex<T>]),
    z1: &mut [Complex<T>],
    z2: &mut [Complex<T>],
    iters: usize,
) {
    let n = p.n();
    let pre = maj.block_inverse(p);
    let precond = |r1: &[Complex<T>], r2: &[Complex<T>], s1: &mut [Complex<T>], s2: &mut [Complex<T>]| {
        for i in 0..n {
            let m = &pre[i];
            s1[i] = m[0] * r1[i] + m[1] * r2[i];
            s2[i] = m[2] * r1[i] + m[3] * r2[i];
        }
    };
    let mut h1 = vec![czero(); n];
    let mut h2 = vec![czero(); n];
    maj.apply(p, z1, z2, &mut h1, &mut h2);
    let mut r1: Field<T> = (0..n).map(|i| b.0[i] - h1[i]).collect();
    let mut r2: Field<T> = (0..n).map(|i| b.1[i] - h2[i]).collect();
    let mut s1 = vec![czero(); n];
    let mut s2 = vec![czero(); n];
    precond(&r1, &r2, &mut s1, &mut s2);
    let mut d1 = s1.clone();
    let mut d2 = s2.clone();
    let mut rs = dot(&r1, &r2, &s1, &s2);
    for _ in 0..iters {
        if !(rs > T::zero()) {
            break;
        }
        maj.apply(p, &d1, &d2, &mut h1, &mut h2);
        let dhd = dot(&d1, &d2, &h1, &h2);
        if !(dhd > T::zero()) {
            break;
        }
        let alpha = rs / dhd;
        for i in 0..n {
            z1[i] += d1[i] * alpha;
            z2[i] += d2[i] * alpha;
            r1[i] -= h1[i] * alpha;
            r2[i] -= h2[i] * alpha;
        }
        precond(&r1, &r2, &mut s1, &mut s2);
        let rs_new = dot(&r1, &r2, &s1, &s2);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            d1[i] = s1[i] + d1[i] * beta;
            d2[i] = s2[i] + d2[i] * beta;
        }
    }
}

/// Separates the two spin echoes of a (double-echo-removed) OLED image.
pub fn detach_echoes<T: Real>(
    x0: &ComplexImage<T>,
    params: &SequenceParams,
    dp: &DetachParams,
) -> Result<DetachResult<T>> {
    x0.expect_domain(Domain::Image)?;
    dp.validate()?;
    params.validate()?;
    let grid: GridSpec = x0.grid;
    let scale = x0.max_abs().as_f64();
    if !(scale > 0.0) {
        return Err(Error::EmptySupport("input image is identically zero".into()));
    }
    let m = edge_weight_matrix(x0, dp.edge_sigma * scale)?;
    let prob = Problem {
        rows: grid.rows,
        cols: grid.cols,
        x0: x0.data.clone(),
        p1: phase_ramp(&grid, params.shift1_cyc),
        p2: phase_ramp(&grid, params.shift2_cyc),
        m: m.data,
        lambdas: [T::lit(dp.lambda1 * scale), T::lit(dp.lambda2 * scale), T::lit(dp.lambda3 * scale)],
        eps: T::lit(dp.smoothing * scale),
    };
    let n = prob.n();

    // Minimum-norm data-consistent start: z = Aᴴ x0 / 2.
    let half = T::lit(0.5);
    let mut z1: Field<T> = (0..n).map(|i| prob.p1[i].conj() * prob.x0[i] * half).collect();
    let mut z2: Field<T> = (0..n).map(|i| prob.p2[i].conj() * prob.x0[i] * half).collect();
    let b1: Field<T> = (0..n).map(|i| prob.p1[i].conj() * prob.x0[i]).collect();
    let b2: Field<T> = (0..n).map(|i| prob.p2[i].conj() * prob.x0[i]).collect();

    let mut kappa = match dp.kappa_mode {
        KappaMode::Fixed(k) => k,
        KappaMode::MedianRatio => 1.0,
    };
    let mut f = prob.objective(&z1, &z2, T::lit(kappa));
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..dp.max_outer_iters {
        iterations += 1;
        if dp.kappa_mode == KappaMode::MedianRatio && prob.lambdas[2] > T::zero() {
            let im = |z: &Field<T>| ComplexImage { grid, data: z.clone(), domain: Domain::Image };
            if let Ok(k_new) = kappa_estimate(&im(&z1), &im(&z2)) {
                if k_new.is_finite() && k_new != kappa {
                    let f_new = prob.objective(&z1, &z2, T::lit(k_new));
                    if f_new <= f {
                        kappa = k_new;
                        f = f_new;
                    }
                }
            }
        }
        let kt = T::lit(kappa);
        let combo = prob.combo(&z1, &z2, kt);
        let maj = Majorizer {
            w: [
                prob.weights(&z1, prob.lambdas[0]),
                prob.weights(&z2, prob.lambdas[1]),
                prob.weights(&combo, prob.lambdas[2]),
            ],
            kappa: kt,
        };
        pcg(&prob, &maj, (&b1, &b2), &mut z1, &mut z2, dp.cg_iters);
        let f_new = prob.objective(&z1, &z2, kt);
        let rel = (f - f_new).abs() / f.abs().max(f64::MIN_POSITIVE);
        f = f_new;
        trace.push(f);
        if rel < dp.tol {
            converged = true;
            break;
        }
    }

    let x1 = ComplexImage { grid, data: z1, domain: Domain::Image };
    let x2 = ComplexImage { grid, data: z2, domain: Domain::Image };
    let amp = echo_amplitudes(params.alpha_deg, params.beta_deg);
    let (t2_ms, mask) = t2_from_echoes(&x1, &x2, &amp, params.te1_ms, params.te2_ms, dp.pd_threshold);
    Ok(DetachResult { x1, x2, objective_trace: trace, t2_ms, mask, kappa, iterations, converged })
}
