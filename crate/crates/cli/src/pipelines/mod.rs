//! Example measurement chains, each driven by a [`PipelineConfig`].

pub mod compensate;
pub mod demo_ringing;
pub mod hydrophone;
pub mod ibp;
pub mod shock;

use std::path::PathBuf;

use dynunc::design::kaiser_lowpass;
use dynunc::dft::{dft_multiply, gum_dft, gum_idft, mask_bins, snr_mask};
use dynunc::sos::sos_linear_response;
use dynunc::{Cov, DftGrid, DigitalFilterU, SosParams, SpectrumU, TimeSeriesU};
use num_complex::Complex64;

use crate::config::{PipelineConfig, Stages};
use crate::error::{Result, Stage};
use crate::io::{write_results, Artifacts};

/// Runs the configured pipeline and writes its results, returning the
/// written paths.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    log::info!("running {} pipeline", cfg.kind().name());
    let artifacts = run(cfg)?;
    write_results(&cfg.output_dir, &artifacts)
}

/// Runs the configured pipeline without writing anything.
pub fn run(cfg: &PipelineConfig) -> Result<Artifacts> {
    Ok(match &cfg.stages {
        Stages::Shock(c) => shock::run(c, cfg.seed)?.artifacts,
        Stages::Compensate(c) => compensate::run(c, cfg.seed)?.artifacts,
        Stages::Hydrophone(c) => hydrophone::run(c, cfg.seed)?.artifacts,
        Stages::Ibp(c) => ibp::run(c, cfg.seed)?.artifacts,
        Stages::DemoRinging(c) => demo_ringing::run(c, cfg.seed)?.artifacts,
    })
}

/// Sensor response with first-order covariance on the bins of `grid`.
///
/// A continuous-time response is complex at the Nyquist frequency, where
/// the spectrum of a real signal must be real; that bin is replaced by its
/// magnitude, signed like its real part, with the variance propagated.
pub fn sensor_spectrum(p: &SosParams, grid: DftGrid) -> dynunc::Result<SpectrumU> {
    let freqs = grid.freqs();
    let h = sos_linear_response(p, &freqs)?;
    let mut values = h.values().to_vec();
    let mut cov = h.cov().cloned().unwrap_or_else(|| Cov::zeros(2 * freqs.len(), 2 * freqs.len()));
    if let Some(k) = grid.nyquist() {
        let m = freqs.len();
        let v = values[k];
        let mag = v.norm();
        let sign = if v.re < 0.0 { -1.0 } else { 1.0 };
        let (a, b) = if mag > 0.0 { (sign * v.re / mag, sign * v.im / mag) } else { (1.0, 0.0) };
        values[k] = Complex64::new(sign * mag, 0.0);
        let row = a * cov.row(k) + b * cov.row(m + k);
        cov.set_row(k, &row);
        let col = a * cov.column(k) + b * cov.column(m + k);
        cov.set_column(k, &col);
        cov.row_mut(m + k).fill(0.0);
        cov.column_mut(m + k).fill(0.0);
    }
    SpectrumU::from_complex(&values, freqs, cov, Some(grid))
}

/// Magnitude response on the bins of `grid` of a linear-phase Kaiser
/// low-pass, i.e. the low-pass with its group delay removed.
pub fn zero_phase_lowpass(order: usize, cutoff: f64, beta: f64, grid: DftGrid) -> dynunc::Result<Vec<Complex64>> {
    let low = kaiser_lowpass(order, cutoff, 1.0 / grid.ts, beta)?;
    let half = order as f64 / 2.0;
    Ok(grid
        .freqs()
        .iter()
        .map(|f| {
            let w = 2.0 * std::f64::consts::PI * f * grid.ts;
            let r = low.response(w) * Complex64::from_polar(1.0, w * half);
            Complex64::new(r.re, 0.0)
        })
        .collect())
}

/// Periodic response of an LTI system given by its values on the DFT bins.
pub fn apply_response(x: &[f64], ts: f64, h: &SpectrumU) -> Result<Vec<f64>> {
    let n = x.len();
    let f = gum_dft(&TimeSeriesU::exact(x.to_vec(), ts).stage("simulate")?).stage("simulate")?;
    let y = gum_idft(&dft_multiply(&f, h).stage("simulate")?, n).stage("simulate")?;
    Ok(y.values().to_vec())
}

/// Cascade of two filters with the coefficient covariance carried through
/// the convolution of the numerators. Only FIR stages are supported.
pub fn cascade_fir(first: &DigitalFilterU, second: &DigitalFilterU) -> dynunc::Result<DigitalFilterU> {
    if !first.is_fir() || !second.is_fir() {
        return Err(dynunc::Error::InvalidParameter("cascade needs FIR stages".into()));
    }
    let (b1, b2) = (first.b(), second.b());
    let len = b1.len() + b2.len() - 1;
    // b = C1·b2 + C2·b1 with Ci the convolution matrices; the stages are independent.
    let conv = |b: &[f64], cols: usize| Cov::from_fn(len, cols, |i, j| if i >= j && i - j < b.len() { b[i - j] } else { 0.0 });
    let c2 = conv(b2, b1.len());
    let c1 = conv(b1, b2.len());
    let mut u = &c2 * first.uba() * c2.transpose() + &c1 * second.uba() * c1.transpose();
    dynunc::types::symmetrize(&mut u);
    DigitalFilterU::new(dynunc::poly::convolve(b1, b2), vec![1.0], u, first.delay_n0() + second.delay_n0())
}

/// `x` shifted right by `d` samples with zeros shifted in.
pub fn delayed(x: &[f64], d: usize) -> Vec<f64> {
    (0..x.len()).map(|n| if n >= d { x[n - d] } else { 0.0 }).collect()
}

/// `x[(n - d) mod N]`.
pub fn circular_delay(x: &[f64], d: usize) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| x[(i + n - d % n) % n]).collect()
}

/// Output of `flt` in periodic steady state for the period `x`.
pub fn periodic_apply(flt: &DigitalFilterU, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let reps = flt.transient_len().max(flt.b().len()).div_ceil(n) + 1;
    let long: Vec<f64> = x.iter().copied().cycle().take((reps + 1) * n).collect();
    flt.apply(&long)[reps * n..].to_vec()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    rms(&d)
}

/// Smallest RMS error of `a·y[n+s] ≈ x[n]` over the gain `a` and integer
/// shifts `|s| <= max_shift`, with zeros outside the record.
pub fn best_scaled_shift_rms(y: &[f64], x: &[f64], max_shift: usize) -> (f64, f64, isize) {
    let n = x.len() as isize;
    let mut best = (f64::INFINITY, 1.0, 0);
    for s in -(max_shift as isize)..=max_shift as isize {
        let ys: Vec<f64> = (0..n)
            .map(|i| {
                let j = i + s;
                if (0..n).contains(&j) {
                    y[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
        let yy: f64 = ys.iter().map(|v| v * v).sum();
        if yy == 0.0 {
            continue;
        }
        let a = ys.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() / yy;
        let scaled: Vec<f64> = ys.iter().map(|v| a * v).collect();
        let e = rms_diff(&scaled, x);
        if e < best.0 {
            best = (e, a, s);
        }
    }
    best
}

/// Fraction of samples with `|est - truth| <= k·u`.
pub fn coverage(est: &[f64], u: &[f64], truth: &[f64], k: f64) -> f64 {
    let hits = est
        .iter()
        .zip(u)
        .zip(truth)
        .filter(|((e, s), t)| (*e - *t).abs() <= k * *s)
        .count();
    hits as f64 / est.len() as f64
}

/// Bins of `x` resolved above `kappa` times their uncertainty; the others
/// are zeroed. Unresolved bins hold no information about the measurand, so
/// the dynamic error bound is evaluated over the resolved ones.
pub fn resolved(x: &SpectrumU, kappa: f64) -> dynunc::Result<SpectrumU> {
    mask_bins(x, &snr_mask(x, kappa))
}

/// Converts a band given in Hz to rad/s.
pub fn band_rad(band: [f64; 2]) -> (f64, f64) {
    let w = 2.0 * std::f64::consts::PI;
    (w * band[0], w * band[1])
}
