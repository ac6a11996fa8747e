//! Discrete Fourier transform of uncertain real signals and arithmetic on
//! the resulting half-spectra with first-order covariance propagation.
//!
//! Convention: `X_k = Σ_n x_n·exp(-2πi·k·n/N)` without normalization, and
//! `1/N` on the inverse. Spectra are stored as `[Re_0..Re_{M-1}, Im_0..Im_{M-1}]`
//! with `M = N/2 + 1` (floor division, so odd `N` has no Nyquist bin).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::types::{symmetrize, AmpPhaseU, Cov, DftGrid, SpectrumU, TimeSeriesU, Uncertainty};

/// Default relative magnitude floor for spectral division.
pub const DEFAULT_MAG_FLOOR: f64 = 1e-6;

/// How the covariance of a DFT or inverse DFT is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DftPath {
    /// Apply the transform to the rows and columns of the covariance by FFT.
    #[default]
    Fft,
    /// Build the sensitivity matrix explicitly and form `J·U·Jᵀ`.
    Dense,
}

/// Forward and inverse real DFT of a fixed length on the stacked layout.
struct RealDft {
    n: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RealDft {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        RealDft {
            n,
            m: n / 2 + 1,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn real_bins(&self) -> Vec<usize> {
        DftGrid { n: self.n, ts: 1.0 }.real_bins()
    }

    /// `J·x` for a real signal `x`.
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let mut out = vec![0.0; 2 * self.m];
        for k in 0..self.m {
            out[k] = buf[k].re;
            out[self.m + k] = buf[k].im;
        }
        for k in self.real_bins() {
            out[self.m + k] = 0.0;
        }
        out
    }

    /// `G·reim`: real signal with the given half-spectrum.
    fn inverse(&self, reim: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(reim[0], 0.0);
        for k in 1..m {
            let c = Complex64::new(reim[k], reim[m + k]);
            if 2 * k == n {
                buf[k] = Complex64::new(c.re, 0.0);
            } else {
                buf[k] = c;
                buf[n - k] = c.conj();
            }
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// `T·U·Tᵀ` where `T` is applied to columns by `apply`.
    fn sandwich<F>(&self, u: &Cov, out_dim: usize, apply: F) -> Cov
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let in_dim = u.nrows();
        let cols: Vec<Vec<f64>> = (0..in_dim)
            .into_par_iter()
            .map(|j| apply(u.column(j).as_slice()))
            .collect();
        // cols[j] = T·U[:, j]; the rows of T·U are the transposed columns.
        let rows: Vec<Vec<f64>> = (0..out_dim)
            .into_par_iter()
            .map(|i| {
                let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                apply(&row)
            })
            .collect();
        let mut c = DMatrix::from_fn(out_dim, out_dim, |a, i| rows[i][a]);
        symmetrize(&mut c);
        c
    }
}

fn angle(k: usize, n_idx: usize, n: usize) -> f64 {
    2.0 * PI * ((k * n_idx) % n) as f64 / n as f64
}

/// Sensitivity matrix of the half-spectrum with respect to the signal,
/// `(2M)×N`: rows `cos(2πkn/N)` then `-sin(2πkn/N)`.
pub fn dft_matrix(n: usize) -> DMatrix<f64> {
    let grid = DftGrid { n, ts: 1.0 };
    let m = grid.bins();
    let mut j = DMatrix::from_fn(2 * m, n, |r, c| {
        if r < m {
            angle(r, c, n).cos()
        } else {
            -angle(r - m, c, n).sin()
        }
    });
    for k in grid.real_bins() {
        j.row_mut(m + k).fill(0.0);
    }
    j
}

/// Sensitivity matrix of the real signal with respect to its half-spectrum,
/// `N×(2M)`.
pub fn idft_matrix(n: usize) -> DMatrix<f64> {
    let grid = DftGrid { n, ts: 1.0 };
    let m = grid.bins();
    let real_bins = grid.real_bins();
    let weight = |k: usize| if real_bins.contains(&k) { 1.0 } else { 2.0 };
    let nf = n as f64;
    DMatrix::from_fn(n, 2 * m, |r, c| {
        if c < m {
            weight(c) * angle(c, r, n).cos() / nf
        } else if real_bins.contains(&(c - m)) {
            0.0
        } else {
            -weight(c - m) * angle(c - m, r, n).sin() / nf
        }
    })
}

/// DFT of an uncertain real signal with exact covariance propagation.
pub fn gum_dft(x: &TimeSeriesU) -> Result<SpectrumU> {
    gum_dft_with(x, DftPath::Fft)
}

pub fn gum_dft_with(x: &TimeSeriesU, path: DftPath) -> Result<SpectrumU> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("DFT needs at least 2 samples, got {n}")));
    }
    let grid = DftGrid { n, ts: x.ts() };
    let m = grid.bins();
    let (reim, cov) = match path {
        DftPath::Fft => {
            let rdft = RealDft::new(n);
            let reim = rdft.forward(x.values());
            let cov = match x.unc() {
                u if u.is_zero() => Cov::zeros(2 * m, 2 * m),
                Uncertainty::White(s) => white_dft_cov(&grid, s * s),
                _ => rdft.sandwich(&x.covariance(), 2 * m, |v| rdft.forward(v)),
            };
            (reim, cov)
        }
        DftPath::Dense => {
            let j = dft_matrix(n);
            let reim = (&j * nalgebra::DVector::from_column_slice(x.values())).as_slice().to_vec();
            let mut cov = &j * x.covariance() * j.transpose();
            symmetrize(&mut cov);
            (reim, cov)
        }
    };
    SpectrumU::new(reim, grid.freqs(), cov, Some(grid))
}

/// `σ²·J·Jᵀ` in closed form: diagonal, `N` at real-valued bins and `N/2`
/// elsewhere.
fn white_dft_cov(grid: &DftGrid, var: f64) -> Cov {
    let m = grid.bins();
    let nf = grid.n as f64;
    let real_bins = grid.real_bins();
    let mut c = Cov::zeros(2 * m, 2 * m);
    for k in 0..m {
        if real_bins.contains(&k) {
            c[(k, k)] = var * nf;
        } else {
            c[(k, k)] = var * nf / 2.0;
            c[(m + k, m + k)] = var * nf / 2.0;
        }
    }
    c
}

/// Inverse DFT of a half-spectrum to a real signal of `n_out` samples with
/// full output covariance.
pub fn gum_idft(f: &SpectrumU, n_out: usize) -> Result<TimeSeriesU> {
    gum_idft_with(f, n_out, DftPath::Fft)
}

pub fn gum_idft_with(f: &SpectrumU, n_out: usize, path: DftPath) -> Result<TimeSeriesU> {
    let m = f.bins();
    if m < 2 || (n_out != 2 * (m - 1) && n_out != 2 * m - 1) {
        return Err(Error::Dimension(format!(
            "{m} bins cannot be inverted to {n_out} samples (expected {} or {})",
            2 * m.saturating_sub(1),
            (2 * m).saturating_sub(1)
        )));
    }
    let ts = match f.grid() {
        Some(g) if g.n != n_out => {
            return Err(Error::Dimension(format!(
                "spectrum was computed from {} samples, requested {n_out}",
                g.n
            )))
        }
        Some(g) => g.ts,
        None => {
            let f1 = f.freqs()[1];
            if !(f1 > 0.0) {
                return Err(Error::GridMismatch("cannot infer sampling interval".into()));
            }
            1.0 / (n_out as f64 * f1)
        }
    };
    let (values, cov) = match path {
        DftPath::Fft => {
            let rdft = RealDft::new(n_out);
            let values = rdft.inverse(f.reim());
            let cov = if f.cov().iter().all(|v| *v == 0.0) {
                Cov::zeros(n_out, n_out)
            } else {
                rdft.sandwich(f.cov(), n_out, |v| rdft.inverse(v))
            };
            (values, cov)
        }
        DftPath::Dense => {
            let g = idft_matrix(n_out);
            let values = (&g * nalgebra::DVector::from_column_slice(f.reim())).as_slice().to_vec();
            let mut cov = &g * f.cov() * g.transpose();
            symmetrize(&mut cov);
            (values, cov)
        }
    };
    TimeSeriesU::new(values, ts, 0.0, Uncertainty::Full(cov))
}

/// Real 2×2 Jacobian `[∂re/∂re, ∂re/∂im, ∂im/∂re, ∂im/∂im]` of one bin.
type BinJacobian = [f64; 4];

/// Jacobian of `z ↦ c·z` for complex `c`.
fn mul_jacobian(c: Complex64) -> BinJacobian {
    [c.re, -c.im, c.im, c.re]
}

/// `A·U·Aᵀ` for block-diagonal `A` acting bin-wise on the stacked layout.
fn binwise_propagate(jac: &[BinJacobian], u: &Cov) -> Cov {
    let m = jac.len();
    let d = 2 * m;
    if u.iter().all(|v| *v == 0.0) {
        return Cov::zeros(d, d);
    }
    let mut t = Cov::zeros(d, d);
    for (k, &[a, b, c, e]) in jac.iter().enumerate() {
        for col in 0..d {
            let ur = u[(k, col)];
            let ui = u[(m + k, col)];
            t[(k, col)] = a * ur + b * ui;
            t[(m + k, col)] = c * ur + e * ui;
        }
    }
    let mut r = Cov::zeros(d, d);
    for (k, &[a, b, c, e]) in jac.iter().enumerate() {
        for row in 0..d {
            let tr = t[(row, k)];
            let ti = t[(row, m + k)];
            r[(row, k)] = a * tr + b * ti;
            r[(row, m + k)] = c * tr + e * ti;
        }
    }
    symmetrize(&mut r);
    r
}

fn check_same_grid(x: &SpectrumU, h: &SpectrumU) -> Result<()> {
    if x.bins() != h.bins() {
        return Err(Error::GridMismatch(format!("{} vs {} bins", x.bins(), h.bins())));
    }
    let scale = x.freqs().iter().fold(0.0f64, |a, f| a.max(f.abs())).max(f64::MIN_POSITIVE);
    for (k, (a, b)) in x.freqs().iter().zip(h.freqs()).enumerate() {
        if (a - b).abs() > 1e-9 * scale {
            return Err(Error::GridMismatch(format!("bin {k}: {a} Hz vs {b} Hz")));
        }
    }
    Ok(())
}

fn combine(x: &SpectrumU, values: &[Complex64], jx: &[BinJacobian], h: &SpectrumU, jh: &[BinJacobian]) -> Result<SpectrumU> {
    let cov = binwise_propagate(jx, x.cov()) + binwise_propagate(jh, h.cov());
    SpectrumU::from_complex(values, x.freqs().to_vec(), cov, x.grid())
}

/// Bin-wise product `Y = X·H` of two independent uncertain spectra.
pub fn dft_multiply(x: &SpectrumU, h: &SpectrumU) -> Result<SpectrumU> {
    check_same_grid(x, h)?;
    let m = x.bins();
    let mut values = Vec::with_capacity(m);
    let mut jx = Vec::with_capacity(m);
    let mut jh = Vec::with_capacity(m);
    for k in 0..m {
        let (xv, hv) = (x.value(k), h.value(k));
        values.push(xv * hv);
        jx.push(mul_jacobian(hv));
        jh.push(mul_jacobian(xv));
    }
    combine(x, &values, &jx, h, &jh)
}

/// Bin-wise quotient `Y = X/H` of two independent uncertain spectra.
///
/// Fails when `|H_k| < mag_floor·max|H|` at any bin.
pub fn dft_deconv(x: &SpectrumU, h: &SpectrumU, mag_floor: f64) -> Result<SpectrumU> {
    check_same_grid(x, h)?;
    let m = x.bins();
    let mags: Vec<f64> = (0..m).map(|k| h.value(k).norm()).collect();
    let max = mags.iter().fold(0.0f64, |a, v| a.max(*v));
    let low: Vec<usize> = (0..m).filter(|&k| mags[k] == 0.0 || mags[k] < mag_floor * max).collect();
    if !low.is_empty() {
        return Err(Error::MagnitudeFloor(low));
    }
    let mut values = Vec::with_capacity(m);
    let mut jx = Vec::with_capacity(m);
    let mut jh = Vec::with_capacity(m);
    for k in 0..m {
        let (xv, hv) = (x.value(k), h.value(k));
        let inv = hv.inv();
        let y = xv * inv;
        values.push(y);
        jx.push(mul_jacobian(inv));
        jh.push(mul_jacobian(-y * inv));
    }
    combine(x, &values, &jx, h, &jh)
}

/// Transfer function `DFT(yref)/DFT(xmeas)` with covariance.
pub fn dft_transferfunction(yref: &TimeSeriesU, xmeas: &TimeSeriesU, mag_floor: f64) -> Result<SpectrumU> {
    if yref.len() != xmeas.len() {
        return Err(Error::Dimension(format!("{} vs {} samples", yref.len(), xmeas.len())));
    }
    if (yref.ts() - xmeas.ts()).abs() > 1e-12 * yref.ts() {
        return Err(Error::GridMismatch(format!(
            "sampling intervals differ: {} s vs {} s",
            yref.ts(),
            xmeas.ts()
        )));
    }
    dft_deconv(&gum_dft(yref)?, &gum_dft(xmeas)?, mag_floor)
}

/// Bins whose magnitude is at least `kappa` times its standard uncertainty
/// `sqrt(var Re + var Im)`. Exact bins count as resolved unless zero.
pub fn snr_mask(f: &SpectrumU, kappa: f64) -> Vec<bool> {
    let m = f.bins();
    let u = f.cov();
    (0..m)
        .map(|k| {
            let mag = f.value(k).norm();
            let sd = (u[(k, k)] + u[(m + k, m + k)]).max(0.0).sqrt();
            mag > 0.0 && mag >= kappa * sd
        })
        .collect()
}

/// Sets the bins with `keep[k] == false` to exactly zero with zero
/// uncertainty (including their cross-covariances).
pub fn mask_bins(f: &SpectrumU, keep: &[bool]) -> Result<SpectrumU> {
    let m = f.bins();
    if keep.len() != m {
        return Err(Error::Dimension(format!("mask of length {} for {m} bins", keep.len())));
    }
    let mut reim = f.reim().to_vec();
    let mut cov = f.cov().clone();
    for k in (0..m).filter(|&k| !keep[k]) {
        for idx in [k, m + k] {
            reim[idx] = 0.0;
            cov.row_mut(idx).fill(0.0);
            cov.column_mut(idx).fill(0.0);
        }
    }
    SpectrumU::new(reim, f.freqs().to_vec(), cov, f.grid())
}

/// Converts amplitude and phase to real and imaginary parts.
pub fn amp_phase_to_dft(ap: &AmpPhaseU) -> Result<SpectrumU> {
    let m = ap.bins();
    let mut values = Vec::with_capacity(m);
    let mut jac = Vec::with_capacity(m);
    for k in 0..m {
        let (a, p) = (ap.amplitude()[k], ap.phase()[k]);
        let (s, c) = p.sin_cos();
        values.push(Complex64::new(a * c, a * s));
        jac.push([c, -a * s, s, a * c]);
    }
    let cov = binwise_propagate(&jac, ap.cov());
    SpectrumU::from_complex(&values, ap.freqs().to_vec(), cov, ap.grid())
}

/// Converts real and imaginary parts to amplitude and phase, optionally
/// unwrapping the phase along frequency.
pub fn dft_to_amp_phase(f: &SpectrumU, unwrap: bool) -> Result<AmpPhaseU> {
    let m = f.bins();
    let mut amp = Vec::with_capacity(m);
    let mut phase = Vec::with_capacity(m);
    let mut jac = Vec::with_capacity(m);
    for k in 0..m {
        let v = f.value(k);
        let a = v.norm();
        if a == 0.0 {
            return Err(Error::ZeroMagnitude(k));
        }
        amp.push(a);
        phase.push(v.im.atan2(v.re));
        let a2 = a * a;
        jac.push([v.re / a, v.im / a, -v.im / a2, v.re / a2]);
    }
    if unwrap {
        unwrap_phase(&mut phase);
    }
    let cov = binwise_propagate(&jac, f.cov());
    AmpPhaseU::new(amp, phase, cov, f.freqs().to_vec(), f.grid())
}

/// Removes jumps larger than π between consecutive phase values.
pub fn unwrap_phase(phase: &mut [f64]) {
    let Some(&first) = phase.first() else {
        return;
    };
    let mut offset = 0.0;
    let mut prev = first;
    for p in phase.iter_mut().skip(1) {
        let raw = *p;
        offset -= 2.0 * PI * ((raw - prev) / (2.0 * PI)).round();
        prev = raw;
        *p = raw + offset;
    }
}
