//! Digital filters with uncertain coefficients used as measurement models.
//!
//! A filter is `y[n] = Σ b_k x[n-k] - Σ_{k≥1} a_k y[n-k]` with `a₀ = 1` and
//! zero initial conditions. The coefficient covariance is taken over the
//! stacked parameter vector `b ‖ (a₁, …, a_Na)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mc::{draw_rng, std_normal, GaussianSampler, MIN_DRAWS};
use crate::poly::{eval_z, roots_z};
use crate::types::{check_cov, Cov, SpectrumU, StateSpace, TimeSeriesU, Uncertainty};

/// Digital filter `(b, a)` with joint coefficient covariance and a nominal
/// delay of `delay_n0` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalFilterU {
    b: Vec<f64>,
    a: Vec<f64>,
    uba: Cov,
    delay_n0: usize,
}

impl DigitalFilterU {
    /// `a` may be empty (FIR) or must start with exactly 1.
    pub fn new(b: Vec<f64>, a: Vec<f64>, uba: Cov, delay_n0: usize) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::InvalidParameter("numerator must not be empty".into()));
        }
        let a = if a.is_empty() { vec![1.0] } else { a };
        if a[0] != 1.0 {
            return Err(Error::InvalidParameter(format!("a[0] must be 1, got {}", a[0])));
        }
        if b.iter().chain(&a).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite filter coefficient".into()));
        }
        let dim = b.len() + a.len() - 1;
        let uba = check_cov(&uba, dim, "filter coefficients", 1e-10)?;
        Ok(DigitalFilterU { b, a, uba, delay_n0 })
    }

    /// FIR filter with exact coefficients.
    pub fn fir(b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        Self::new(b, vec![1.0], Cov::zeros(n, n), 0)
    }

    /// Filter with exact coefficients.
    pub fn exact(b: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let dim = b.len() + a.len().max(1) - 1;
        Self::new(b, a, Cov::zeros(dim, dim), 0)
    }

    /// Rebuilds a filter of the same shape from a stacked parameter vector.
    pub fn from_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a filter with {}",
                params.len(),
                self.n_params()
            )));
        }
        let nb = self.b.len();
        let mut a = vec![1.0];
        a.extend_from_slice(&params[nb..]);
        let dim = params.len();
        Self::new(params[..nb].to_vec(), a, Cov::zeros(dim, dim), self.delay_n0)
    }

    pub fn with_delay(mut self, delay_n0: usize) -> Self {
        self.delay_n0 = delay_n0;
        self
    }

    pub fn with_uba(self, uba: Cov) -> Result<Self> {
        Self::new(self.b, self.a, uba, self.delay_n0)
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn a_tail(&self) -> &[f64] {
        &self.a[1..]
    }

    pub fn uba(&self) -> &Cov {
        &self.uba
    }

    pub fn delay_n0(&self) -> usize {
        self.delay_n0
    }

    pub fn is_fir(&self) -> bool {
        self.a.len() == 1
    }

    pub fn n_params(&self) -> usize {
        self.b.len() + self.a.len() - 1
    }

    /// Stacked parameter vector `b ‖ a₁..`.
    pub fn params(&self) -> Vec<f64> {
        self.b.iter().chain(self.a_tail()).copied().collect()
    }

    pub fn has_coefficient_unc(&self) -> bool {
        self.uba.iter().any(|v| *v != 0.0)
    }

    /// Response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        eval_z(&self.b, w) / eval_z(&self.a, w)
    }

    /// Response at frequencies in Hz for sampling rate `fs`.
    pub fn freq_resp(&self, freqs: &[f64], fs: f64) -> Vec<Complex64> {
        freqs
            .iter()
            .map(|f| self.response(2.0 * std::f64::consts::PI * f / fs))
            .collect()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        roots_z(&self.a)
    }

    /// True iff every pole lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.is_fir() || self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Filters `x` with zero initial conditions (transposed direct form II).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut state = FilterState::new(&self.b, &self.a);
        x.iter().map(|v| state.step(&self.b, &self.a, *v)).collect()
    }

    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        if n > 0 {
            x[0] = 1.0;
        }
        self.apply(&x)
    }

    /// Number of leading output samples affected by the zero initial state:
    /// `max(Nb, 3·τ)` with `τ` the time constant of the slowest pole.
    pub fn transient_len(&self) -> usize {
        let nb = self.b.len() - 1;
        if self.is_fir() {
            return nb;
        }
        let rmax = self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        if rmax >= 1.0 {
            return usize::MAX;
        }
        if rmax == 0.0 {
            return nb.max(self.a.len() - 1);
        }
        let tau = -1.0 / rmax.ln();
        nb.max((3.0 * tau).ceil() as usize)
    }
}

/// Delay line of a transposed direct form II filter.
#[derive(Debug, Clone)]
struct FilterState {
    z: Vec<f64>,
}

impl FilterState {
    fn new(b: &[f64], a: &[f64]) -> Self {
        FilterState {
            z: vec![0.0; b.len().max(a.len()) - 1],
        }
    }

    #[inline]
    fn step(&mut self, b: &[f64], a: &[f64], x: f64) -> f64 {
        let y = b[0] * x + self.z.first().copied().unwrap_or(0.0);
        let n = self.z.len();
        for i in 0..n {
            let next = if i + 1 < n { self.z[i + 1] } else { 0.0 };
            let bi = b.get(i + 1).copied().unwrap_or(0.0);
            let ai = a.get(i + 1).copied().unwrap_or(0.0);
            self.z[i] = bi * x - ai * y + next;
        }
        y
    }
}

fn input_variances(x: &TimeSeriesU) -> Result<Vec<f64>> {
    match x.unc() {
        Uncertainty::Full(_) => Err(Error::InvalidParameter(
            "input covariance must be white or pointwise for this filter".into(),
        )),
        _ => Ok(x.variances()),
    }
}

/// FIR filtering with closed-form pointwise uncertainty.
///
/// The variance at sample `n` combines the input covariance over the filter
/// window, the coefficient covariance against the regressor of past inputs,
/// and the (second-order) product term `tr(Ub·Ux)` that is exact for
/// independent inputs and coefficients.
pub fn fir_unc_filter(x: &TimeSeriesU, flt: &DigitalFilterU) -> Result<TimeSeriesU> {
    if !flt.is_fir() {
        return Err(Error::InvalidParameter(
            "fir_unc_filter needs an empty denominator tail".into(),
        ));
    }
    let b = flt.b();
    let ub = flt.uba();
    let has_ub = flt.has_coefficient_unc();
    let xv = x.values();
    let unc = x.unc();
    let n = xv.len();
    let y = flt.apply(xv);
    let var: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let taps = b.len().min(i + 1);
            let mut v = 0.0;
            if unc.is_diagonal() {
                for k in 0..taps {
                    let vx = unc.variance(i - k);
                    v += b[k] * b[k] * vx;
                    if has_ub {
                        v += ub[(k, k)] * vx;
                    }
                }
            } else {
                for k in 0..taps {
                    for l in 0..taps {
                        let c = unc.covariance(i - k, i - l);
                        v += b[k] * b[l] * c;
                        if has_ub {
                            v += ub[(k, l)] * c;
                        }
                    }
                }
            }
            if has_ub {
                for k in 0..taps {
                    let mut s = 0.0;
                    for l in 0..taps {
                        s += ub[(k, l)] * xv[i - l];
                    }
                    v += xv[i - k] * s;
                }
            }
            v.max(0.0)
        })
        .collect();
    TimeSeriesU::new(
        y,
        x.ts(),
        x.t0(),
        Uncertainty::Pointwise(var.into_iter().map(f64::sqrt).collect()),
    )
}

/// State-space realization in controllable canonical form, using the
/// recursion `z[n] = C·z[n-1] + D·x[n-1]`, `y[n] = E·z[n] + F·x[n]`.
pub fn tf2ss(flt: &DigitalFilterU) -> Result<StateSpace> {
    let order = (flt.b().len().max(flt.a().len())) - 1;
    let mut b = flt.b().to_vec();
    let mut a = flt.a().to_vec();
    b.resize(order + 1, 0.0);
    a.resize(order + 1, 0.0);
    let f = DMatrix::from_element(1, 1, b[0]);
    if order == 0 {
        return StateSpace::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, 1), DMatrix::zeros(1, 0), f);
    }
    let c = DMatrix::from_fn(order, order, |i, j| {
        if i == 0 {
            -a[j + 1]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let d = DMatrix::from_fn(order, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let e = DMatrix::from_fn(1, order, |_, j| b[j + 1] - b[0] * a[j + 1]);
    StateSpace::new(c, d, e, f)
}

/// IIR filtering with exact coefficients; the input noise (white or
/// pointwise) is propagated through the state covariance recursion.
pub fn iir_ss_filter(x: &TimeSeriesU, flt: &DigitalFilterU) -> Result<TimeSeriesU> {
    if flt.has_coefficient_unc() {
        return Err(Error::InvalidParameter(
            "iir_ss_filter propagates input noise only; use smc_filter for uncertain coefficients".into(),
        ));
    }
    if !flt.is_stable() {
        return Err(Error::Unstable("denominator has a pole on or outside the unit circle".into()));
    }
    let vx = input_variances(x)?;
    let ss = tf2ss(flt)?;
    let y = flt.apply(x.values());
    let f = ss.f[(0, 0)];
    let n = ss.states();
    let mut p = DMatrix::<f64>::zeros(n, n);
    let ddt = &ss.d * ss.d.transpose();
    let ct = ss.c.transpose();
    let mut var = Vec::with_capacity(vx.len());
    for (i, v) in vx.iter().enumerate() {
        if i > 0 {
            p = &ss.c * &p * &ct + &ddt * vx[i - 1];
        }
        let ep = (&ss.e * &p * ss.e.transpose())[(0, 0)];
        var.push((ep + f * f * v).max(0.0));
    }
    TimeSeriesU::new(
        y,
        x.ts(),
        x.t0(),
        Uncertainty::Pointwise(var.into_iter().map(f64::sqrt).collect()),
    )
}

/// Settings for [`smc_filter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcConfig {
    pub draws: usize,
    /// Samples processed per pass over the filter instances.
    pub block: usize,
    pub seed: u64,
}

impl SmcConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        SmcConfig { draws, block: 1024, seed }
    }
}

/// Draws that share one set of streaming accumulators.
const SMC_CHUNK: usize = 256;

struct Instance {
    b: Vec<f64>,
    a: Vec<f64>,
    state: FilterState,
    rng: ChaCha20Rng,
}

/// Sequential Monte Carlo filter: `M` filter instances with sampled
/// coefficients run side by side, keeping only their delay lines. Statistics
/// per output sample are reduced over draws in a fixed order, so the result
/// is bit-identical for any thread count and any block length.
pub struct SmcFilter {
    instances: Vec<Instance>,
    rejected: usize,
}

/// Per-chunk streaming mean and sum of squared deviations for one block.
struct ChunkStats {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl SmcFilter {
    pub fn new(flt: &DigitalFilterU, cfg: &SmcConfig) -> Result<Self> {
        let m = cfg.draws;
        if m < MIN_DRAWS {
            return Err(Error::InvalidParameter(format!("SMC needs at least {MIN_DRAWS} draws, got {m}")));
        }
        if cfg.block == 0 {
            return Err(Error::InvalidParameter("block length must be > 0".into()));
        }
        let random = flt.has_coefficient_unc();
        if !flt.is_stable() && !random {
            return Err(Error::Unstable("nominal filter is unstable".into()));
        }
        let sampler = if random {
            Some(GaussianSampler::new(&flt.params(), flt.uba())?)
        } else {
            None
        };
        let cap = 10 * m;
        let drawn: Vec<(Option<Instance>, usize)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = draw_rng(cfg.seed, i as u64);
                let Some(s) = &sampler else {
                    let inst = Instance {
                        b: flt.b().to_vec(),
                        a: flt.a().to_vec(),
                        state: FilterState::new(flt.b(), flt.a()),
                        rng,
                    };
                    return (Some(inst), 0);
                };
                let mut rejected = 0;
                while rejected <= cap {
                    let p = s.sample(&mut rng);
                    let cand = flt.from_params(&p);
                    match cand {
                        Ok(c) if c.is_stable() => {
                            let inst = Instance {
                                state: FilterState::new(c.b(), c.a()),
                                b: c.b,
                                a: c.a,
                                rng,
                            };
                            return (Some(inst), rejected);
                        }
                        _ => rejected += 1,
                    }
                }
                (None, rejected)
            })
            .collect();
        let rejected: usize = drawn.iter().map(|d| d.1).sum();
        if rejected > cap || drawn.iter().any(|d| d.0.is_none()) {
            return Err(Error::Rejection { rejected, accepted: drawn.iter().filter(|d| d.0.is_some()).count() });
        }
        if rejected > 0 {
            log::info!("smc_filter: {rejected} unstable coefficient draws rejected");
        }
        Ok(SmcFilter {
            instances: drawn.into_iter().filter_map(|d| d.0).collect(),
            rejected,
        })
    }

    pub fn draws(&self) -> usize {
        self.instances.len()
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Number of `f64` values held per instance (coefficients and delay line).
    pub fn state_len(&self) -> usize {
        self.instances
            .first()
            .map(|i| i.b.len() + i.a.len() + i.state.z.len())
            .unwrap_or(0)
    }

    /// Feeds the next samples (with their noise standard deviations) to all
    /// instances; returns the mean and sample variance per sample.
    pub fn process_block(&mut self, x: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != sigma.len() {
            return Err(Error::Dimension(format!("{} samples with {} noise levels", x.len(), sigma.len())));
        }
        let len = x.len();
        let chunks: Vec<ChunkStats> = self
            .instances
            .par_chunks_mut(SMC_CHUNK)
            .map(|chunk| {
                let mut st = ChunkStats {
                    count: 0.0,
                    mean: vec![0.0; len],
                    m2: vec![0.0; len],
                };
                let mut out = vec![0.0; len];
                for inst in chunk.iter_mut() {
                    for (n, o) in out.iter_mut().enumerate() {
                        let u = if sigma[n] > 0.0 {
                            x[n] + sigma[n] * std_normal(&mut inst.rng)
                        } else {
                            x[n]
                        };
                        *o = inst.state.step(&inst.b, &inst.a, u);
                    }
                    st.count += 1.0;
                    for n in 0..len {
                        let d = out[n] - st.mean[n];
                        st.mean[n] += d / st.count;
                        st.m2[n] += d * (out[n] - st.mean[n]);
                    }
                }
                st
            })
            .collect();
        let mut total = ChunkStats {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        };
        for c in chunks {
            let n = total.count + c.count;
            for k in 0..len {
                let delta = c.mean[k] - total.mean[k];
                total.mean[k] += delta * (c.count / n);
                total.m2[k] += c.m2[k] + delta * delta * total.count * c.count / n;
            }
            total.count = n;
        }
        let d = (total.count - 1.0).max(1.0);
        let var = total.m2.iter().map(|q| (q / d).max(0.0)).collect();
        Ok((total.mean, var))
    }
}

/// Monte Carlo filtering with sampled coefficients and white (or pointwise)
/// input noise. Returns the MC mean and pointwise standard deviation.
pub fn smc_filter(x: &[f64], ts: f64, noise: &Uncertainty, flt: &DigitalFilterU, cfg: &SmcConfig) -> Result<TimeSeriesU> {
    let sigma: Vec<f64> = match noise {
        Uncertainty::White(s) => vec![*s; x.len()],
        Uncertainty::Pointwise(v) if v.len() == x.len() => v.clone(),
        Uncertainty::Pointwise(v) => {
            return Err(Error::Dimension(format!("{} noise levels for {} samples", v.len(), x.len())))
        }
        Uncertainty::Full(_) => {
            return Err(Error::InvalidParameter("smc_filter takes white or pointwise noise".into()))
        }
    };
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidParameter("noise standard deviation must be >= 0".into()));
    }
    let mut smc = SmcFilter::new(flt, cfg)?;
    let mut mean = Vec::with_capacity(x.len());
    let mut std = Vec::with_capacity(x.len());
    for (xb, sb) in x.chunks(cfg.block).zip(sigma.chunks(cfg.block)) {
        let (m, v) = smc.process_block(xb, sb)?;
        mean.extend(m);
        std.extend(v.into_iter().map(f64::sqrt));
    }
    TimeSeriesU::new(mean, ts, 0.0, Uncertainty::Pointwise(std))
}

/// Estimate of a measurand together with a bound on the dynamic error.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvResult {
    pub y: TimeSeriesU,
    pub delta_bound: Vec<f64>,
}

/// Pointwise bound on the dynamic error of a deconvolution, split by band.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicErrorBound {
    /// Bound per output sample (the triangle-inequality bound is the same
    /// for every sample).
    pub bound: Vec<f64>,
    /// Contribution of bins at or below `w1`.
    pub passband: f64,
    /// Contribution of bins in `(w1, w2]`.
    pub transition: f64,
    /// Contribution of bins above `w2`.
    pub stopband: f64,
}

impl DynamicErrorBound {
    pub fn total(&self) -> f64 {
        self.passband + self.transition + self.stopband
    }
}

/// Bound on the dynamic error of applying `flt` to a measured signal whose
/// spectrum is `x`, for a sensor with response `h` on the bins of `x`.
///
/// The residual `R = H·F - e^{-jωn0Ts}` maps the measurand spectrum onto the
/// error spectrum; the measurand spectrum is estimated as `X/H`, so the bound
/// is `(1/N)·Σ w_k·|R_k|·|X_k|/|H_k|`. `band` holds `(ω̄1, ω̄2)` in rad/s and
/// only sorts the contributions.
pub fn dynamic_error_bound(flt: &DigitalFilterU, h: &[Complex64], x: &SpectrumU, band: (f64, f64)) -> Result<DynamicErrorBound> {
    let (n, ts) = grid_of(x)?;
    let g: Vec<Complex64> = x
        .freqs()
        .iter()
        .map(|f| flt.response(2.0 * std::f64::consts::PI * f * ts))
        .collect();
    dynamic_error_bound_response(&g, flt.delay_n0(), h, x, band).map(|mut b| {
        b.bound.truncate(n);
        b
    })
}

/// As [`dynamic_error_bound`] for a deconvolution given directly by its
/// response `g` on the bins of `x` (frequency-domain deconvolution).
pub fn dynamic_error_bound_response(
    g: &[Complex64],
    delay_n0: usize,
    h: &[Complex64],
    x: &SpectrumU,
    band: (f64, f64),
) -> Result<DynamicErrorBound> {
    let m = x.bins();
    if h.len() != m || g.len() != m {
        return Err(Error::GridMismatch(format!(
            "spectrum has {m} bins, sensor response {} and filter response {}",
            h.len(),
            g.len()
        )));
    }
    if band.0 > band.1 {
        return Err(Error::InvalidParameter("band must satisfy w1 <= w2".into()));
    }
    let (n, ts) = grid_of(x)?;
    let nyq = if n % 2 == 0 { Some(m - 1) } else { None };
    let (mut pass, mut trans, mut stop) = (0.0, 0.0, 0.0);
    for k in 0..m {
        let f = x.freqs()[k];
        let w = 2.0 * std::f64::consts::PI * f;
        let target = Complex64::from_polar(1.0, -w * delay_n0 as f64 * ts);
        let r = (h[k] * g[k] - target).norm();
        let xk = x.value(k).norm();
        let hk = h[k].norm();
        let term = if r == 0.0 || xk == 0.0 {
            0.0
        } else if hk == 0.0 {
            f64::INFINITY
        } else {
            r * xk / hk
        };
        let weight = if k == 0 || Some(k) == nyq { 1.0 } else { 2.0 };
        let c = weight * term / n as f64;
        if w <= band.0 {
            pass += c;
        } else if w <= band.1 {
            trans += c;
        } else {
            stop += c;
        }
    }
    let total = pass + trans + stop;
    Ok(DynamicErrorBound {
        bound: vec![total; n],
        passband: pass,
        transition: trans,
        stopband: stop,
    })
}

fn grid_of(x: &SpectrumU) -> Result<(usize, f64)> {
    if let Some(g) = x.grid() {
        return Ok((g.n, g.ts));
    }
    let m = x.bins();
    if m < 2 {
        return Err(Error::GridMismatch("spectrum without grid needs at least two bins".into()));
    }
    let n = 2 * (m - 1);
    let f1 = x.freqs()[1];
    Ok((n, 1.0 / (n as f64 * f1)))
}

/// Variance of `Σ_k h_k·x[n-k]` for white input of unit variance, summed over
/// the first `len` impulse-response samples.
pub fn impulse_energy(flt: &DigitalFilterU, len: usize) -> f64 {
    flt.impulse_response(len).iter().map(|h| h * h).sum()
}
