//! Least-squares design of deconvolution filters from a (calibrated,
//! uncertain) frequency response, and the usual DSP helpers around it:
//! Kaiser low-pass, group delay, stability test, Savitzky-Golay.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filter::DigitalFilterU;
use crate::mc::{draw_rng, for_each_draw, GaussianSampler, RunningCov, MIN_DRAWS};
use crate::poly::{eval_z, eval_z_ramped, poly_from_roots, roots_z};
use crate::types::{check_cov, Cov};

/// Frequency response samples with optional covariance over the stacked
/// `[Re₀..Re_{M-1}, Im₀..Im_{M-1}]` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqRespData {
    freqs: Vec<f64>,
    values: Vec<Complex64>,
    cov: Option<Cov>,
}

impl FreqRespData {
    pub fn new(freqs: Vec<f64>, values: Vec<Complex64>, cov: Option<Cov>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::Dimension(format!("{} frequencies for {} values", freqs.len(), values.len())));
        }
        if freqs.is_empty() {
            return Err(Error::InvalidParameter("empty frequency response".into()));
        }
        if freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::InvalidParameter("frequencies must be finite and >= 0".into()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("frequencies must be strictly increasing".into()));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidParameter("non-finite response value".into()));
        }
        let cov = match cov {
            Some(u) => Some(check_cov(&u, 2 * values.len(), "frequency response", 1e-9)?),
            None => None,
        };
        Ok(FreqRespData { freqs, values, cov })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn cov(&self) -> Option<&Cov> {
        self.cov.as_ref()
    }

    /// Stacked real and imaginary parts.
    pub fn reim(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).chain(self.values.iter().map(|v| v.im)).collect()
    }

    /// Rejects frequencies above `fs/2`.
    pub fn check_rate(&self, fs: f64) -> Result<()> {
        if !(fs > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling rate must be > 0, got {fs}")));
        }
        let top = *self.freqs.last().expect("nonempty");
        if top > fs / 2.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!("frequency {top} Hz above fs/2 = {} Hz", fs / 2.0)));
        }
        Ok(())
    }

    /// Weights `1/(var Re + var Im)` per frequency, normalized to mean 1.
    pub fn inverse_variance_weights(&self) -> Option<Vec<f64>> {
        let u = self.cov.as_ref()?;
        let m = self.len();
        let v: Vec<f64> = (0..m).map(|k| u[(k, k)] + u[(m + k, m + k)]).collect();
        if v.iter().any(|x| *x <= 0.0) {
            return None;
        }
        let w: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
        let mean = w.iter().sum::<f64>() / m as f64;
        Some(w.into_iter().map(|x| x / mean).collect())
    }
}

fn targets(values: &[Complex64], freqs: &[f64], delay_n0: usize, fs: f64, inv: bool) -> Result<Vec<Complex64>> {
    values
        .iter()
        .zip(freqs)
        .enumerate()
        .map(|(k, (h, f))| {
            let shift = Complex64::from_polar(1.0, -2.0 * PI * f * delay_n0 as f64 / fs);
            if inv {
                if h.norm() == 0.0 {
                    return Err(Error::ZeroMagnitude(k));
                }
                Ok(shift / h)
            } else {
                Ok(shift * h)
            }
        })
        .collect()
}

fn check_weights(weights: Option<&[f64]>, m: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; m]),
        Some(w) if w.len() != m => Err(Error::Dimension(format!("{} weights for {m} frequencies", w.len()))),
        Some(w) if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => {
            Err(Error::InvalidParameter("weights must be finite and >= 0".into()))
        }
        Some(w) => Ok(w.to_vec()),
    }
}

/// Minimum-norm least-squares solver for a fixed design matrix, with
/// singular values below `1e-8·σ_max` truncated. The trigonometric basis
/// over a narrow band is ill-conditioned, and directions below that level
/// are not determined by the band. Keeping them lets each Monte Carlo refit
/// chase features of its draw with coefficients of order 1e5, and the sample
/// covariance then never settles.
struct LsSolver {
    pinv: DMatrix<f64>,
    rank: usize,
}

impl LsSolver {
    fn new(a: DMatrix<f64>) -> Result<Self> {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return Err(Error::RankDeficient("design matrix is zero".into()));
        }
        let tol = 1e-8 * smax;
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        let pinv = svd
            .pseudo_inverse(tol)
            .map_err(|e| Error::RankDeficient(e.to_string()))?;
        Ok(LsSolver { pinv, rank })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        (&self.pinv * DVector::from_column_slice(rhs)).as_slice().to_vec()
    }
}

/// Result of [`lsfir`].
#[derive(Debug, Clone, PartialEq)]
pub struct FirDesign {
    pub filter: DigitalFilterU,
    /// RMS of `|F(e^{jω_k}) - T_k|` over the design frequencies.
    pub residual: f64,
    /// Numerical rank of the design matrix.
    pub rank: usize,
}

/// Options shared by the least-squares designs.
#[derive(Debug, Clone, PartialEq)]
pub struct LsOptions {
    /// Per-frequency weights on the equation residuals (uniform if absent).
    pub weights: Option<Vec<f64>>,
    /// Fit the delayed inverse `e^{-jωτ0}/H` instead of `e^{-jωτ0}·H`.
    pub inv: bool,
    /// Monte Carlo draws over the response uncertainty for the coefficient
    /// covariance; ignored when the response carries no covariance.
    pub mc_draws: Option<usize>,
    pub seed: u64,
}

impl Default for LsOptions {
    fn default() -> Self {
        LsOptions {
            weights: None,
            inv: true,
            mc_draws: None,
            seed: 0,
        }
    }
}

/// Least-squares FIR fit of order `order` to the (delayed, optionally
/// inverted) response `h`.
pub fn lsfir(h: &FreqRespData, order: usize, delay_n0: usize, fs: f64, opts: &LsOptions) -> Result<FirDesign> {
    if order < 1 {
        return Err(Error::InvalidParameter("FIR order must be >= 1".into()));
    }
    h.check_rate(fs)?;
    let m = h.len();
    if order + 1 > m {
        return Err(Error::RankDeficient(format!(
            "{} coefficients need at least as many frequencies, got {m}",
            order + 1
        )));
    }
    let w = check_weights(opts.weights.as_deref(), m)?;
    let ncoef = order + 1;
    let mut a = DMatrix::zeros(2 * m, ncoef);
    for k in 0..m {
        let wk = 2.0 * PI * h.freqs()[k] / fs;
        for n in 0..ncoef {
            let (s, c) = (wk * n as f64).sin_cos();
            a[(k, n)] = w[k] * c;
            a[(m + k, n)] = -w[k] * s;
        }
    }
    let solver = LsSolver::new(a)?;
    let rhs = |t: &[Complex64]| -> Vec<f64> {
        (0..2 * m)
            .map(|i| if i < m { w[i] * t[i].re } else { w[i - m] * t[i - m].im })
            .collect()
    };
    let t = targets(h.values(), h.freqs(), delay_n0, fs, opts.inv)?;
    let b = solver.solve(&rhs(&t));
    let fit = DigitalFilterU::fir(b.clone())?.with_delay(delay_n0);
    let residual = (h
        .freqs()
        .iter()
        .zip(&t)
        .map(|(f, tk)| (fit.response(2.0 * PI * f / fs) - tk).norm_sqr())
        .sum::<f64>()
        / m as f64)
        .sqrt();
    let uba = match (h.cov(), opts.mc_draws) {
        (Some(u), Some(draws)) => {
            if draws < MIN_DRAWS {
                return Err(Error::InvalidParameter(format!("need at least {MIN_DRAWS} draws, got {draws}")));
            }
            let sampler = GaussianSampler::new(&h.reim(), u)?;
            let mut acc = RunningCov::new(ncoef);
            for_each_draw(
                draws,
                |i| {
                    let s = sampler.sample(&mut draw_rng(opts.seed, i as u64));
                    let hv: Vec<Complex64> = (0..m).map(|k| Complex64::new(s[k], s[m + k])).collect();
                    targets(&hv, h.freqs(), delay_n0, fs, opts.inv).map(|t| solver.solve(&rhs(&t)))
                },
                |_, b| acc.update(&b?),
            )?;
            acc.covariance()
        }
        _ => Cov::zeros(ncoef, ncoef),
    };
    Ok(FirDesign {
        filter: DigitalFilterU::new(b, vec![1.0], uba, delay_n0)?,
        residual,
        rank: solver.rank,
    })
}

/// Result of [`lsiir`].
#[derive(Debug, Clone, PartialEq)]
pub struct IirDesign {
    pub filter: DigitalFilterU,
    /// RMS of `|F(e^{jω_k}) - T_k|` over the design frequencies.
    pub residual: f64,
    /// Poles were reflected into the unit circle.
    pub stabilized: bool,
    /// The reweighting iterations settled before `max_iter`.
    pub converged: bool,
}

/// Equation-error least-squares IIR fit with `nb + 1` numerator and `na`
/// free denominator coefficients.
///
/// The linearized problem `B - T·A ≈ 0` is re-solved with weights
/// `1/|A_prev|` until the coefficients settle. Poles on or outside the unit
/// circle are then reflected to `1/p̄` and the numerator is refitted with the
/// denominator held fixed.
pub fn lsiir(
    h: &FreqRespData,
    nb: usize,
    na: usize,
    delay_n0: usize,
    fs: f64,
    max_iter: usize,
    opts: &LsOptions,
) -> Result<IirDesign> {
    if na < 1 {
        return Err(Error::InvalidParameter("IIR design needs na >= 1".into()));
    }
    h.check_rate(fs)?;
    let m = h.len();
    let nunk = nb + 1 + na;
    if 2 * m < nunk {
        return Err(Error::RankDeficient(format!("{nunk} unknowns from {} equations", 2 * m)));
    }
    let w0 = check_weights(opts.weights.as_deref(), m)?;
    let t = targets(h.values(), h.freqs(), delay_n0, fs, opts.inv)?;
    let omega: Vec<f64> = h.freqs().iter().map(|f| 2.0 * PI * f / fs).collect();

    let solve_full = |wt: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut a = DMatrix::zeros(2 * m, nunk);
        let mut rhs = vec![0.0; 2 * m];
        for k in 0..m {
            for n in 0..=nb {
                let e = Complex64::from_polar(wt[k], -omega[k] * n as f64);
                a[(k, n)] = e.re;
                a[(m + k, n)] = e.im;
            }
            for j in 1..=na {
                let e = -t[k] * Complex64::from_polar(wt[k], -omega[k] * j as f64);
                a[(k, nb + j)] = e.re;
                a[(m + k, nb + j)] = e.im;
            }
            rhs[k] = wt[k] * t[k].re;
            rhs[m + k] = wt[k] * t[k].im;
        }
        let x = LsSolver::new(a)?.solve(&rhs);
        let mut den = vec![1.0];
        den.extend_from_slice(&x[nb + 1..]);
        Ok((x[..=nb].to_vec(), den))
    };

    let (mut b, mut a) = solve_full(&w0)?;
    let mut converged = max_iter == 0;
    for _ in 0..max_iter {
        let wt: Vec<f64> = (0..m)
            .map(|k| {
                let mag = eval_z(&a, omega[k]).norm();
                if mag > 0.0 {
                    w0[k] / mag
                } else {
                    w0[k]
                }
            })
            .collect();
        let (nb_new, na_new) = solve_full(&wt)?;
        let change = nb_new
            .iter()
            .zip(&b)
            .chain(na_new.iter().zip(&a))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let scale = nb_new.iter().chain(&na_new).map(|v| v.abs()).fold(0.0, f64::max);
        b = nb_new;
        a = na_new;
        if change <= 1e-10 * scale.max(1.0) {
            converged = true;
            break;
        }
    }

    let mut stabilized = false;
    let poles = roots_z(&a);
    if poles.iter().any(|p| p.norm() >= 1.0) {
        stabilized = true;
        let reflected: Vec<Complex64> = poles
            .iter()
            .map(|p| {
                let r = p.norm();
                if r > 1.0 {
                    1.0 / p.conj()
                } else if r == 1.0 {
                    p * (1.0 - 1e-6)
                } else {
                    *p
                }
            })
            .collect();
        let mut den = poly_from_roots(&reflected);
        den.resize(na + 1, 0.0);
        a = den;
        // Refit the numerator against T·A with the denominator fixed.
        let mut mat = DMatrix::zeros(2 * m, nb + 1);
        let mut rhs = vec![0.0; 2 * m];
        for k in 0..m {
            let wt = w0[k] / eval_z(&a, omega[k]).norm().max(f64::MIN_POSITIVE);
            for n in 0..=nb {
                let e = Complex64::from_polar(wt, -omega[k] * n as f64);
                mat[(k, n)] = e.re;
                mat[(m + k, n)] = e.im;
            }
            let r = t[k] * eval_z(&a, omega[k]) * wt;
            rhs[k] = r.re;
            rhs[m + k] = r.im;
        }
        let refit = LsSolver::new(mat)?.solve(&rhs);
        // Reflecting p scales |A| on the unit circle by 1/|p|; scaling b by the
        // same factor keeps the magnitude response. Keep the better of the two.
        let gain: f64 = poles.iter().filter(|p| p.norm() > 1.0).map(|p| 1.0 / p.norm()).product();
        let scaled: Vec<f64> = b.iter().map(|v| v * gain).collect();
        let rms = |num: &[f64]| -> f64 {
            omega
                .iter()
                .zip(&t)
                .zip(&w0)
                .map(|((wk, tk), wt)| (wt * (eval_z(num, *wk) / eval_z(&a, *wk) - tk)).norm_sqr())
                .sum::<f64>()
        };
        b = if rms(&refit) <= rms(&scaled) { refit } else { scaled };
    }
    let filter = DigitalFilterU::exact(b, a)?.with_delay(delay_n0);
    if !filter.is_stable() {
        return Err(Error::Unstable("stabilization failed".into()));
    }
    let residual = (omega
        .iter()
        .zip(&t)
        .map(|(wk, tk)| (filter.response(*wk) - tk).norm_sqr())
        .sum::<f64>()
        / m as f64)
        .sqrt();
    Ok(IirDesign {
        filter,
        residual,
        stabilized,
        converged,
    })
}

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser window of `len` points.
pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let half = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let r = (n as f64 - half) / half;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Linear-phase windowed-sinc low-pass of even `order` with a Kaiser window,
/// normalized to unit DC gain. The delay is `order/2` samples.
pub fn kaiser_lowpass(order: usize, cutoff: f64, fs: f64, beta: f64) -> Result<DigitalFilterU> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::InvalidParameter(format!("order must be even and > 0, got {order}")));
    }
    if !(fs > 0.0) || !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(Error::InvalidParameter(format!("cutoff {cutoff} Hz outside (0, fs/2) for fs = {fs} Hz")));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let fc = cutoff / fs;
    let win = kaiser_window(order + 1, beta);
    let mid = (order / 2) as f64;
    let mut b: Vec<f64> = win
        .iter()
        .enumerate()
        .map(|(n, wn)| {
            let x = n as f64 - mid;
            let s = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            s * wn
        })
        .collect();
    let dc: f64 = b.iter().sum();
    for v in b.iter_mut() {
        *v /= dc;
    }
    Ok(DigitalFilterU::fir(b)?.with_delay(order / 2))
}

/// Group delay in samples at `freqs` (Hz), by the ramped-coefficient method
/// `τ = Re{Σ n·b_n e^{-jωn} / B} - Re{Σ n·a_n e^{-jωn} / A}`.
pub fn group_delay(flt: &DigitalFilterU, freqs: &[f64], fs: f64) -> Result<Vec<f64>> {
    if !(fs > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling rate must be > 0, got {fs}")));
    }
    let bscale: f64 = flt.b().iter().map(|v| v.abs()).sum();
    let ascale: f64 = flt.a().iter().map(|v| v.abs()).sum();
    freqs
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let w = 2.0 * PI * f / fs;
            let bz = eval_z(flt.b(), w);
            let az = eval_z(flt.a(), w);
            if bz.norm() <= 1e-14 * bscale || az.norm() <= 1e-14 * ascale {
                return Err(Error::ZeroMagnitude(k));
            }
            Ok((eval_z_ramped(flt.b(), w) / bz).re - (eval_z_ramped(flt.a(), w) / az).re)
        })
        .collect()
}

/// True iff all poles lie strictly inside the unit circle (FIR: always).
pub fn isstable(flt: &DigitalFilterU) -> bool {
    flt.is_stable()
}

/// Savitzky-Golay smoothing (`deriv = 0`) or differentiation of `x`.
///
/// Interior samples use the least-squares polynomial convolution; the first
/// and last `window/2` samples evaluate the polynomial fitted to the first
/// and last full window.
pub fn savgol(x: &[f64], window: usize, polyorder: usize, deriv: usize, dt: f64) -> Result<Vec<f64>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParameter(format!("window must be odd, got {window}")));
    }
    if polyorder >= window {
        return Err(Error::InvalidParameter(format!("polyorder {polyorder} must be < window {window}")));
    }
    if deriv > polyorder {
        return Err(Error::InvalidParameter(format!("deriv {deriv} exceeds polyorder {polyorder}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if x.len() < window {
        return Err(Error::InvalidParameter(format!("{} samples shorter than window {window}", x.len())));
    }
    let half = (window / 2) as isize;
    let ncoef = polyorder + 1;
    let v = DMatrix::from_fn(window, ncoef, |i, j| ((i as isize - half) as f64).powi(j as i32));
    let pinv = LsSolver::new(v)?.pinv;
    let scale = 1.0 / dt.powi(deriv as i32);
    // Derivative of Σ c_j t^j at t: Σ_{j≥d} c_j·j!/(j-d)!·t^{j-d}.
    let eval = |c: &[f64], t: f64| -> f64 {
        let mut s = 0.0;
        for (j, cj) in c.iter().enumerate().skip(deriv) {
            let fall: f64 = ((j - deriv + 1)..=j).map(|v| v as f64).product();
            s += cj * fall * t.powi((j - deriv) as i32);
        }
        s * scale
    };
    let fit = |start: usize| -> Vec<f64> {
        (&pinv * DVector::from_column_slice(&x[start..start + window])).as_slice().to_vec()
    };
    let kernel: Vec<f64> = {
        let row: Vec<f64> = (0..window)
            .map(|i| {
                let mut e = vec![0.0; window];
                e[i] = 1.0;
                let c = (&pinv * DVector::from_vec(e)).as_slice().to_vec();
                eval(&c, 0.0)
            })
            .collect();
        row
    };
    let n = x.len();
    let h = half as usize;
    let mut out = vec![0.0; n];
    for i in h..n - h {
        out[i] = kernel.iter().zip(&x[i - h..=i + h]).map(|(k, v)| k * v).sum();
    }
    let head = fit(0);
    for (i, o) in out.iter_mut().enumerate().take(h) {
        *o = eval(&head, i as f64 - half as f64);
    }
    let tail = fit(n - window);
    for i in (n - h)..n {
        out[i] = eval(&tail, (i - (n - window)) as f64 - half as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(m: usize, fs: f64) -> FreqRespData {
        let freqs: Vec<f64> = (0..m).map(|k| k as f64 * fs / 2.0 / (m - 1) as f64).collect();
        FreqRespData::new(freqs, vec![Complex64::new(1.0, 0.0); m], None).unwrap()
    }

    #[test]
    fn lsfir_of_identity_is_delay() {
        let d = lsfir(&flat(64, 1000.0), 12, 5, 1000.0, &LsOptions::default()).unwrap();
        for (n, b) in d.filter.b().iter().enumerate() {
            let expect = if n == 5 { 1.0 } else { 0.0 };
            assert!((b - expect).abs() < 1e-10, "b[{n}] = {b}");
        }
        assert!(d.residual < 1e-8);
        assert_eq!(d.filter.delay_n0(), 5);
    }

    #[test]
    fn lsfir_needs_enough_frequencies() {
        assert!(matches!(
            lsfir(&flat(5, 100.0), 8, 0, 100.0, &LsOptions::default()),
            Err(Error::RankDeficient(_))
        ));
        assert!(lsfir(&flat(5, 100.0), 8, 0, 50.0, &LsOptions::default()).is_err());
    }

    #[test]
    fn lsiir_recovers_one_pole() {
        let fs = 100.0;
        let gen = DigitalFilterU::exact(vec![0.3, 0.1], vec![1.0, -0.7]).unwrap();
        let freqs: Vec<f64> = (0..40).map(|k| k as f64 * 50.0 / 39.0).collect();
        let h = FreqRespData::new(freqs.clone(), gen.freq_resp(&freqs, fs), None).unwrap();
        let opts = LsOptions { inv: false, ..Default::default() };
        let d = lsiir(&h, 1, 1, 0, fs, 5, &opts).unwrap();
        for (x, y) in d.filter.b().iter().zip(gen.b()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((d.filter.a()[1] + 0.7).abs() < 1e-10);
        assert!(!d.stabilized);
    }

    #[test]
    fn lsiir_of_identity() {
        let d = lsiir(&flat(32, 10.0), 3, 2, 2, 10.0, 5, &LsOptions::default()).unwrap();
        let b = d.filter.b();
        assert!((b[2] - 1.0).abs() < 1e-8);
        assert!(d.filter.a()[1..].iter().all(|a| a.abs() < 1e-8));
    }

    #[test]
    fn lsiir_stabilizes_inverse_of_nonminimum_phase() {
        // The inverse of 1 - 2z⁻¹ has its pole at z = 2.
        let fs = 10.0;
        let g = DigitalFilterU::fir(vec![1.0, -2.0]).unwrap();
        let freqs: Vec<f64> = (0..30).map(|k| k as f64 * 5.0 / 29.0).collect();
        let h = FreqRespData::new(freqs.clone(), g.freq_resp(&freqs, fs), None).unwrap();
        let d = lsiir(&h, 0, 1, 0, fs, 3, &LsOptions::default()).unwrap();
        assert!(d.stabilized);
        assert!(isstable(&d.filter));
        // The gain-scaled reflection keeps |H·F| = 1, so the chosen numerator
        // can be no worse than that in the least-squares sense.
        let magnitude_only = DigitalFilterU::exact(vec![0.5], vec![1.0, -0.5]).unwrap();
        let rms = |f: &DigitalFilterU| -> f64 {
            freqs
                .iter()
                .map(|fr| (f.freq_resp(&[*fr], fs)[0] - 1.0 / g.freq_resp(&[*fr], fs)[0]).norm_sqr())
                .sum::<f64>()
        };
        assert!(rms(&d.filter) <= rms(&magnitude_only) + 1e-12);
        for f in &freqs {
            let prod = magnitude_only.freq_resp(&[*f], fs)[0] * g.freq_resp(&[*f], fs)[0];
            assert!((prod.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kaiser_dc_gain_and_delay() {
        let f = kaiser_lowpass(64, 125.0, 1000.0, 8.0).unwrap();
        assert!((f.b().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f.delay_n0(), 32);
        assert!(kaiser_lowpass(63, 125.0, 1000.0, 8.0).is_err());
        assert!(kaiser_lowpass(64, 600.0, 1000.0, 8.0).is_err());
    }

    #[test]
    fn kaiser_beta_zero_is_rectangular() {
        let f = kaiser_lowpass(10, 100.0, 1000.0, 0.0).unwrap();
        let raw: Vec<f64> = (0..=10)
            .map(|n| {
                let x = n as f64 - 5.0;
                if x == 0.0 {
                    0.2
                } else {
                    (2.0 * PI * 0.1 * x).sin() / (PI * x)
                }
            })
            .collect();
        let s: f64 = raw.iter().sum();
        for (a, b) in f.b().iter().zip(&raw) {
            assert!((a - b / s).abs() < 1e-15);
        }
    }

    #[test]
    fn kaiser_stopband() {
        let fs = 1000.0;
        let f = kaiser_lowpass(64, fs / 8.0, fs, 8.0).unwrap();
        let worst = (0..=1000)
            .map(|i| 1.5 * fs / 8.0 + (fs / 2.0 - 1.5 * fs / 8.0) * i as f64 / 1000.0)
            .map(|fr| f.freq_resp(&[fr], fs)[0].norm())
            .fold(0.0, f64::max);
        assert!(20.0 * worst.log10() <= -40.0, "stopband {worst}");
    }

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
    }

    #[test]
    fn group_delay_of_delay_and_symmetric_fir() {
        let mut b = vec![0.0; 8];
        b[3] = 1.0;
        let f = DigitalFilterU::fir(b).unwrap();
        for g in group_delay(&f, &[0.0, 10.0, 33.0], 100.0).unwrap() {
            assert!((g - 3.0).abs() < 1e-12);
        }
        let sym = DigitalFilterU::fir(vec![0.1, 0.3, 0.5, 0.3, 0.1]).unwrap();
        for g in group_delay(&sym, &[0.0, 5.0, 20.0], 100.0).unwrap() {
            assert!((g - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_delay_of_one_pole_matches_phase_slope() {
        let f = DigitalFilterU::exact(vec![0.5], vec![1.0, -0.5]).unwrap();
        let fs = 1.0;
        for &fr in &[0.05, 0.15, 0.3] {
            let h = 1e-6;
            let p1 = f.freq_resp(&[fr - h], fs)[0].arg();
            let p2 = f.freq_resp(&[fr + h], fs)[0].arg();
            let fd = -(p2 - p1) / (2.0 * PI * 2.0 * h);
            let g = group_delay(&f, &[fr], fs).unwrap()[0];
            assert!((g - fd).abs() < 1e-3);
        }
    }

    #[test]
    fn group_delay_rejects_zero() {
        let f = DigitalFilterU::fir(vec![1.0, 1.0]).unwrap();
        assert!(matches!(group_delay(&f, &[0.5], 1.0), Err(Error::ZeroMagnitude(0))));
    }

    #[test]
    fn stability() {
        assert!(isstable(&DigitalFilterU::exact(vec![1.0], vec![1.0, -0.5]).unwrap()));
        assert!(!isstable(&DigitalFilterU::exact(vec![1.0], vec![1.0, -2.0]).unwrap()));
        assert!(isstable(&DigitalFilterU::fir(vec![5.0, -3.0]).unwrap()));
    }

    #[test]
    fn savgol_reproduces_polynomials() {
        let x: Vec<f64> = (0..40).map(|i| {
            let t = i as f64 * 0.1;
            1.0 - 2.0 * t + 0.5 * t * t - 0.1 * t * t * t
        }).collect();
        let y = savgol(&x, 9, 3, 0, 0.1).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn savgol_slope_of_ramp() {
        let x: Vec<f64> = (0..30).map(|i| 3.0 + 2.5 * i as f64 * 0.01).collect();
        for d in savgol(&x, 7, 2, 1, 0.01).unwrap() {
            assert!((d - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn savgol_parameter_checks() {
        let x = vec![0.0; 20];
        assert!(savgol(&x, 8, 2, 0, 1.0).is_err());
        assert!(savgol(&x, 5, 5, 0, 1.0).is_err());
        assert!(savgol(&x, 5, 2, 3, 1.0).is_err());
        assert!(savgol(&x[..3], 5, 2, 0, 1.0).is_err());
    }
}
