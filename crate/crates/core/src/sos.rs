//! Second-order system sensor model
//! `S(ω) = S0·ω0² / (ω0² + 2jωδω0 - ω²)`: frequency response, conversion to
//! a continuous transfer function, Monte Carlo response uncertainty,
//! identification from frequency-response data and bilinear discretization.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::design::FreqRespData;
use crate::error::{Error, Result};
use crate::filter::DigitalFilterU;
use crate::mc::{draw_rng, for_each_draw, GaussianSampler, RunningCov, MIN_DRAWS};
use crate::poly::convolve;
use crate::types::{check_cov, AmpPhaseU, Cov};

/// Physical parameters `(S0, δ, f0)` with their 3×3 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SosParams {
    pub s0: f64,
    pub delta: f64,
    /// Resonance frequency in Hz.
    pub f0: f64,
    cov: Cov,
}

impl SosParams {
    pub fn new(s0: f64, delta: f64, f0: f64, cov: Cov) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidParameter(format!("f0 must be > 0, got {f0}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("damping must be > 0, got {delta}")));
        }
        if !s0.is_finite() {
            return Err(Error::InvalidParameter("S0 must be finite".into()));
        }
        let cov = check_cov(&cov, 3, "SOS parameters", 1e-10)?;
        Ok(SosParams { s0, delta, f0, cov })
    }

    pub fn exact(s0: f64, delta: f64, f0: f64) -> Result<Self> {
        Self::new(s0, delta, f0, Cov::zeros(3, 3))
    }

    pub fn cov(&self) -> &Cov {
        &self.cov
    }

    pub fn w0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    /// Standard uncertainties of `(S0, δ, f0)`.
    pub fn std_unc(&self) -> [f64; 3] {
        [self.cov[(0, 0)].sqrt(), self.cov[(1, 1)].sqrt(), self.cov[(2, 2)].sqrt()]
    }

    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.s0, self.delta, self.f0]
    }
}

fn response_at(s0: f64, delta: f64, f0: f64, f: f64) -> Complex64 {
    // Normalized form S0 / D with D = 1 - r² + 2jδr, r = ω/ω0, in polar form
    // so that S(0) = S0 and S(ω0) = S0/(2jδ) come out exactly.
    let r = f / f0;
    let d = Complex64::new(1.0 - r * r, 2.0 * delta * r);
    Complex64::from_polar(s0 / d.norm(), -d.arg())
}

/// `S(ω)` at each frequency (Hz).
pub fn sos_freq_resp(p: &SosParams, freqs: &[f64]) -> Vec<Complex64> {
    freqs.iter().map(|f| response_at(p.s0, p.delta, p.f0, *f)).collect()
}

/// Continuous transfer function `ρ/(s² + 2δω0·s + ω0²)` with `ρ = S0·ω0²`,
/// as coefficient vectors in descending powers of `s`.
pub fn sos_phys2filter(p: &SosParams) -> (Vec<f64>, Vec<f64>) {
    let w0 = p.w0();
    (vec![p.s0 * w0 * w0], vec![1.0, 2.0 * p.delta * w0, w0 * w0])
}

/// Evaluates a continuous transfer function at `s`.
pub fn eval_s(num: &[f64], den: &[f64], s: Complex64) -> Complex64 {
    let horner = |p: &[f64]| p.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c);
    horner(num) / horner(den)
}

/// Response with first-order covariance from the parameter covariance,
/// using the analytic derivatives of `S = S0/D`, `D = 1 - r² + 2jδr`,
/// `r = f/f0`.
pub fn sos_linear_response(p: &SosParams, freqs: &[f64]) -> Result<FreqRespData> {
    let m = freqs.len();
    let values = sos_freq_resp(p, freqs);
    let mut jac = DMatrix::zeros(2 * m, 3);
    for (k, f) in freqs.iter().enumerate() {
        let r = f / p.f0;
        let d = Complex64::new(1.0 - r * r, 2.0 * p.delta * r);
        let d2 = d * d;
        let ds0 = d.inv();
        let ddelta = -Complex64::new(0.0, 2.0 * r) * p.s0 / d2;
        let df0 = -Complex64::new(-2.0 * r, 2.0 * p.delta) * (-r / p.f0) * p.s0 / d2;
        for (j, g) in [ds0, ddelta, df0].iter().enumerate() {
            jac[(k, j)] = g.re;
            jac[(m + k, j)] = g.im;
        }
    }
    let mut cov = &jac * p.cov() * jac.transpose();
    crate::types::symmetrize(&mut cov);
    FreqRespData::new(freqs.to_vec(), values, Some(cov))
}

/// Representation returned by [`sos_mc_response`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseForm {
    ReIm,
    AmpPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SosResponse {
    ReIm(FreqRespData),
    AmpPhase(AmpPhaseU),
}

/// Largest fraction of rejected parameter draws before giving up.
const MAX_REJECT_RATE: f64 = 0.5;

/// Monte Carlo propagation of the parameter covariance to the response.
///
/// Draws with `δ ≤ 0` or `f0 ≤ 0` are rejected and redrawn from the same
/// stream; the run fails when more draws are rejected than accepted.
pub fn sos_mc_response(p: &SosParams, freqs: &[f64], draws: usize, form: ResponseForm, seed: u64) -> Result<SosResponse> {
    if draws < MIN_DRAWS {
        return Err(Error::InvalidParameter(format!("need at least {MIN_DRAWS} draws, got {draws}")));
    }
    if freqs.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidParameter("frequencies must be >= 0".into()));
    }
    let m = freqs.len();
    let sampler = GaussianSampler::new(&p.as_vec(), p.cov())?;
    let max_tries = 2 * draws;
    let mut acc = RunningCov::new(2 * m);
    let mut rejected = 0usize;
    for_each_draw(
        draws,
        |i| {
            let mut rng = draw_rng(seed, i as u64);
            let mut tries = 0;
            loop {
                let x = sampler.sample(&mut rng);
                if x[1] > 0.0 && x[2] > 0.0 {
                    return (Some(x), tries);
                }
                tries += 1;
                if tries > max_tries {
                    return (None, tries);
                }
            }
        },
        |_, (x, tries)| {
            rejected += tries;
            let Some(x) = x else {
                return Err(Error::Rejection { rejected, accepted: acc.count() as usize });
            };
            let mut row = vec![0.0; 2 * m];
            for (k, f) in freqs.iter().enumerate() {
                let s = response_at(x[0], x[1], x[2], *f);
                match form {
                    ResponseForm::ReIm => {
                        row[k] = s.re;
                        row[m + k] = s.im;
                    }
                    ResponseForm::AmpPhase => {
                        row[k] = s.norm();
                        // arg S = arg S0 - arg(ω0² - ω² + 2jωδω0), continuous in [-π, 0].
                        let w0 = 2.0 * PI * x[2];
                        let w = 2.0 * PI * f;
                        let den = Complex64::new(w0 * w0 - w * w, 2.0 * w * x[1] * w0);
                        row[m + k] = if x[0] < 0.0 { PI } else { 0.0 } - den.arg();
                    }
                }
            }
            acc.update(&row)
        },
    )?;
    if rejected as f64 > MAX_REJECT_RATE * (rejected + draws) as f64 {
        return Err(Error::Rejection { rejected, accepted: draws });
    }
    let mean = acc.mean().to_vec();
    let cov = acc.covariance();
    Ok(match form {
        ResponseForm::ReIm => {
            let vals = (0..m).map(|k| Complex64::new(mean[k], mean[m + k])).collect();
            SosResponse::ReIm(FreqRespData::new(freqs.to_vec(), vals, Some(cov))?)
        }
        ResponseForm::AmpPhase => SosResponse::AmpPhase(AmpPhaseU::new(
            mean[..m].to_vec(),
            mean[m..].to_vec(),
            cov,
            freqs.to_vec(),
            None,
        )?),
    })
}

/// Options for [`fit_sos`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSosOptions {
    /// Weight the equations by the inverse standard deviation of `1/S`
    /// propagated from the response covariance.
    pub weighting: bool,
    /// Monte Carlo refits for the parameter covariance (when `US` is given).
    pub draws: usize,
    pub seed: u64,
}

impl Default for FitSosOptions {
    fn default() -> Self {
        FitSosOptions {
            weighting: false,
            draws: 1000,
            seed: 0,
        }
    }
}

/// Least-squares solve with a fixed design, reused across refits.
struct Solver3 {
    pinv: DMatrix<f64>,
}

fn params_from_coeffs(c: &[f64], wscale: f64) -> Result<[f64; 3]> {
    let (c1, c2, c3) = (c[0], c[1] / wscale, c[2] / (wscale * wscale));
    if !(c1 > 0.0) || !(c3 > 0.0) {
        return Err(Error::NonPhysical(format!("1/S0 = {c1:e}, 1/(S0·ω0²) = {c3:e}")));
    }
    let w0 = (c1 / c3).sqrt();
    let delta = c2 * w0 / (2.0 * c1);
    if !(delta > 0.0) {
        return Err(Error::NonPhysical(format!("damping {delta:e} is not positive")));
    }
    Ok([1.0 / c1, delta, w0 / (2.0 * PI)])
}

/// Identifies `(S0, δ, f0)` from a measured complex response.
///
/// The reciprocal `K = 1/S = 1/S0 + (2δ/(S0ω0))·jω - ω²/(S0ω0²)` is linear in
/// its three coefficients, which are found by least squares over the stacked
/// real and imaginary equations. With a response covariance the parameter
/// covariance is estimated by refitting Monte Carlo draws of the response.
pub fn fit_sos(freqs: &[f64], s: &[Complex64], us: Option<&Cov>, opts: &FitSosOptions) -> Result<SosParams> {
    let m = freqs.len();
    if s.len() != m {
        return Err(Error::Dimension(format!("{m} frequencies for {} response values", s.len())));
    }
    let mut distinct = freqs.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::RankDeficient("need at least three distinct frequencies".into()));
    }
    if let Some(k) = s.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::ZeroMagnitude(k));
    }
    let us = match us {
        Some(u) => Some(check_cov(u, 2 * m, "response covariance", 1e-9)?),
        None => None,
    };
    let omega: Vec<f64> = freqs.iter().map(|f| 2.0 * PI * f).collect();
    let wscale = omega.iter().fold(0.0f64, |a, w| a.max(w.abs()));

    // Row scales: 1 (uniform) or 1/σ of Re K and Im K.
    let (wr, wi): (Vec<f64>, Vec<f64>) = match (&us, opts.weighting) {
        (Some(u), true) => (0..m)
            .map(|k| {
                let c = -(s[k].inv() * s[k].inv());
                let (vr, vi, cri) = (u[(k, k)], u[(m + k, m + k)], u[(k, m + k)]);
                let var_re = c.re * c.re * vr - 2.0 * c.re * c.im * cri + c.im * c.im * vi;
                let var_im = c.im * c.im * vr + 2.0 * c.re * c.im * cri + c.re * c.re * vi;
                let w = |v: f64| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 };
                (w(var_re), w(var_im))
            })
            .unzip(),
        _ => (vec![1.0; m], vec![1.0; m]),
    };
    let mut a = DMatrix::zeros(2 * m, 3);
    for k in 0..m {
        let x = omega[k] / wscale;
        a[(k, 0)] = wr[k];
        a[(k, 2)] = -wr[k] * x * x;
        a[(m + k, 1)] = wi[k] * x;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = f64::EPSILON * (2 * m) as f64 * smax;
    if svd.singular_values.iter().filter(|v| **v > tol).count() < 3 {
        return Err(Error::RankDeficient("frequencies do not determine all three coefficients".into()));
    }
    let solver = Solver3 {
        pinv: svd.pseudo_inverse(tol).map_err(|e| Error::RankDeficient(e.to_string()))?,
    };
    let fit = |resp: &[Complex64]| -> Result<[f64; 3]> {
        let mut rhs = DVector::zeros(2 * m);
        for k in 0..m {
            let kk = resp[k].inv();
            rhs[k] = wr[k] * kk.re;
            rhs[m + k] = wi[k] * kk.im;
        }
        let c = &solver.pinv * rhs;
        params_from_coeffs(c.as_slice(), wscale)
    };
    let [s0, delta, f0] = fit(s)?;
    let cov = match us {
        Some(u) if u.iter().any(|v| *v != 0.0) => {
            if opts.draws < MIN_DRAWS {
                return Err(Error::InvalidParameter(format!("need at least {MIN_DRAWS} draws, got {}", opts.draws)));
            }
            let reim: Vec<f64> = s.iter().map(|v| v.re).chain(s.iter().map(|v| v.im)).collect();
            let sampler = GaussianSampler::new(&reim, &u)?;
            let mut acc = RunningCov::new(3);
            let mut failed = 0usize;
            for_each_draw(
                opts.draws,
                |i| {
                    let x = sampler.sample(&mut draw_rng(opts.seed, i as u64));
                    let resp: Vec<Complex64> = (0..m).map(|k| Complex64::new(x[k], x[m + k])).collect();
                    fit(&resp)
                },
                |_, r| {
                    match r {
                        Ok(p) => acc.update(&p)?,
                        Err(_) => failed += 1,
                    }
                    Ok(())
                },
            )?;
            if failed as f64 > MAX_REJECT_RATE * opts.draws as f64 {
                return Err(Error::Rejection {
                    rejected: failed,
                    accepted: opts.draws - failed,
                });
            }
            if failed > 0 {
                log::warn!("fit_sos: {failed} of {} Monte Carlo refits were non-physical", opts.draws);
            }
            acc.covariance()
        }
        _ => Cov::zeros(3, 3),
    };
    SosParams::new(s0, delta, f0, cov)
}

/// [`fit_sos`] on [`FreqRespData`].
pub fn fit_sos_data(h: &FreqRespData, opts: &FitSosOptions) -> Result<SosParams> {
    fit_sos(h.freqs(), h.values(), h.cov(), opts)
}

/// Bilinear (Tustin) discretization of a continuous transfer function given
/// in descending powers of `s`. With `prewarp_f` the substitution constant is
/// `ω_p/tan(ω_p/(2fs))`, so both responses agree exactly at that frequency.
pub fn bilinear_discretize(num: &[f64], den: &[f64], fs: f64, prewarp_f: Option<f64>) -> Result<DigitalFilterU> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidParameter(format!("sampling rate must be > 0, got {fs}")));
    }
    let trim = |p: &[f64]| -> Vec<f64> { p.iter().copied().skip_while(|c| *c == 0.0).collect() };
    let num = trim(num);
    let den = trim(den);
    if den.is_empty() || num.is_empty() {
        return Err(Error::InvalidParameter("empty or zero transfer function polynomial".into()));
    }
    if num.len() > den.len() {
        return Err(Error::InvalidParameter("numerator degree exceeds denominator degree".into()));
    }
    let k = match prewarp_f {
        None => 2.0 * fs,
        Some(fp) => {
            if !(fp > 0.0 && fp < fs / 2.0) {
                return Err(Error::InvalidParameter(format!("prewarp frequency {fp} Hz outside (0, fs/2)")));
            }
            let wp = 2.0 * PI * fp;
            wp / (wp / (2.0 * fs)).tan()
        }
    };
    let n = den.len() - 1;
    // Σ p_i s^{n-i} with s = k(1 - z⁻¹)/(1 + z⁻¹), times (1 + z⁻¹)^n.
    let map = |p: &[f64]| -> Vec<f64> {
        let offset = n + 1 - p.len();
        let mut out = vec![0.0; n + 1];
        for (i, c) in p.iter().enumerate() {
            let power = n - (i + offset);
            let mut term = vec![c * k.powi(power as i32)];
            for _ in 0..power {
                term = convolve(&term, &[1.0, -1.0]);
            }
            for _ in 0..(n - power) {
                term = convolve(&term, &[1.0, 1.0]);
            }
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
        }
        out
    };
    let b = map(&num);
    let a = map(&den);
    let a0 = a[0];
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if a0.abs() <= 1e-14 * scale {
        return Err(Error::InvalidParameter("denominator degenerates under the bilinear map".into()));
    }
    let b: Vec<f64> = b.iter().map(|v| v / a0).collect();
    let mut a: Vec<f64> = a.iter().map(|v| v / a0).collect();
    a[0] = 1.0;
    DigitalFilterU::exact(b, a)
}

/// Discrete filter of the SOS at rate `fs`.
pub fn sos_digital_filter(p: &SosParams, fs: f64, prewarp_f: Option<f64>) -> Result<DigitalFilterU> {
    let (num, den) = sos_phys2filter(p);
    bilinear_discretize(&num, &den, fs, prewarp_f)
}
