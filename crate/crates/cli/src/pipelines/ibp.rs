//! Deconvolution of an invasive blood pressure measurement.
//!
//! The second-order model of the catheter system is fitted to a sinusoidal
//! calibration, an FIR inverse with Kaiser low-pass is designed from the
//! fitted model with its uncertainty, and the measurement is filtered both
//! with the closed-form uncertainty propagation and with sequential Monte
//! Carlo so that the two can be compared.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use dynunc::design::{isstable, kaiser_lowpass, lsfir, lsiir};
use dynunc::dft::gum_dft;
use dynunc::filter::{dynamic_error_bound, fir_unc_filter, smc_filter, SmcConfig};
use dynunc::mc::{draw_rng, std_normal};
use dynunc::signals::add_noise;
use dynunc::sos::{fit_sos_data, sos_freq_resp, sos_linear_response, FitSosOptions};
use dynunc::{Cov, FreqRespData, LsOptions, SosParams, SpectrumU, TimeSeriesU, Uncertainty};
use serde::{Deserialize, Serialize};

use super::{band_rad, cascade_fir, delayed, resolved, rms_diff};
use crate::config::{check, require_file, resolve, StageConfig};
use crate::error::{Result, Stage};
use crate::io::{read_freqresp_csv, read_timeseries_csv, Artifacts, Report};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Input,
    pub sensor: Sensor,
    pub calibration: Calibration,
    pub design: Design,
    pub iir: Iir,
    pub signal: Signal,
    pub smc: Smc,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Input {
    /// Measured frequency response `f,re,im[,unc_re,unc_im]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    /// Measured pressure signal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PathBuf>,
}

/// Catheter system used for the simulated calibration and measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensor {
    pub s0: f64,
    pub delta: f64,
    pub f0: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor {
            s0: 1.0,
            delta: 0.2,
            f0: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub f_min: f64,
    pub f_max: f64,
    pub points: usize,
    /// Relative standard uncertainty of the real and imaginary parts.
    pub noise: f64,
    /// Monte Carlo refits for the parameter covariance.
    pub draws: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            f_min: 0.5,
            f_max: 25.0,
            points: 50,
            noise: 0.005,
            draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Design {
    pub order: usize,
    pub delay: usize,
    /// Upper end of the fitted band in Hz.
    pub f_max: f64,
    pub points: usize,
    /// Monte Carlo draws for the coefficient covariance.
    pub draws: usize,
    pub lowpass_order: usize,
    pub cutoff: f64,
    pub beta: f64,
    /// Band edges in Hz used to split the dynamic error bound.
    pub band: [f64; 2],
    /// Bins of the measured spectrum below this signal-to-noise ratio are
    /// left out of the dynamic error bound.
    pub bound_kappa: f64,
}

impl Default for Design {
    fn default() -> Self {
        Design {
            order: 24,
            delay: 12,
            f_max: 25.0,
            points: 200,
            draws: 1000,
            lowpass_order: 32,
            cutoff: 15.0,
            beta: 8.0,
            band: [12.0, 25.0],
            bound_kappa: 3.0,
        }
    }
}

/// Optional IIR inverse, reported for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Iir {
    pub enabled: bool,
    pub nb: usize,
    pub na: usize,
    pub delay: usize,
    pub max_iter: usize,
}

impl Default for Iir {
    fn default() -> Self {
        Iir {
            enabled: true,
            nb: 4,
            na: 2,
            delay: 2,
            max_iter: 20,
        }
    }
}

/// Periodic pressure waveform `mean + Σ a_k·cos(2π·k·f_h·t + φ_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub fs: f64,
    pub duration: f64,
    /// Heart rate in Hz.
    pub rate: f64,
    pub mean: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    /// White noise standard deviation on the measured signal.
    pub noise: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            fs: 100.0,
            duration: 10.0,
            rate: 1.2,
            mean: 100.0,
            amplitudes: vec![20.0, 10.0, 5.0, 3.0, 2.0, 1.0, 0.5, 0.3],
            phases: vec![0.0, -0.6, -1.2, -1.8, -2.4, -3.0, -3.6, -4.2],
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smc {
    pub draws: usize,
    pub block: usize,
}

impl Default for Smc {
    fn default() -> Self {
        Smc {
            draws: 10_000,
            block: 1024,
        }
    }
}

impl StageConfig for Config {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.input.calibration, base);
        resolve(&mut self.input.measurement, base);
    }

    fn validate(&self) -> Result<()> {
        require_file(&self.input.calibration, "input.calibration")?;
        require_file(&self.input.measurement, "input.measurement")?;
        let s = &self.signal;
        check(s.amplitudes.len() == s.phases.len(), || {
            "signal.amplitudes and signal.phases must have the same length".into()
        })?;
        check(s.fs > 0.0 && s.duration > 0.0, || "signal.fs and signal.duration must be > 0".into())?;
        check((s.fs * s.duration).round() <= 4096.0, || "signal exceeds 4096 samples".into())?;
        check(self.design.f_max < s.fs / 2.0, || "design.f_max must be below fs/2".into())?;
        check(self.calibration.points >= 3, || "calibration.points must be >= 3".into())?;
        check(self.design.band[0] <= self.design.band[1], || "design.band must be increasing".into())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub fitted: SosParams,
    /// Closed-form and Monte Carlo standard uncertainties of the estimate.
    pub u_closed_form: Vec<f64>,
    pub u_smc: Vec<f64>,
    /// Samples at the start affected by the zero initial state.
    pub transient: usize,
    pub bound: f64,
    pub rms_error: Option<f64>,
}

impl Outcome {
    /// Largest `|u_closed_form - u_smc|/u_closed_form` after the transient.
    pub fn max_discrepancy(&self) -> f64 {
        self.u_closed_form
            .iter()
            .zip(&self.u_smc)
            .skip(self.transient)
            .map(|(a, b)| (a - b).abs() / a)
            .fold(0.0, f64::max)
    }
}

pub fn run(cfg: &Config, seed: u64) -> Result<Outcome> {
    let truth_sensor = SosParams::exact(cfg.sensor.s0, cfg.sensor.delta, cfg.sensor.f0).stage("simulate")?;
    let cal = match &cfg.input.calibration {
        Some(path) => read_freqresp_csv(path)?,
        None => simulate_calibration(&truth_sensor, &cfg.calibration, seed).stage("simulate")?,
    };
    let fit_opts = FitSosOptions {
        weighting: true,
        draws: cfg.calibration.draws,
        seed,
    };
    let fitted = fit_sos_data(&cal, &fit_opts).stage("fit")?;

    let s = &cfg.signal;
    let (measured, truth) = match &cfg.input.measurement {
        Some(path) => (read_timeseries_csv(path)?, None),
        None => {
            let (y, x) = simulate_measurement(&truth_sensor, s, seed)?;
            (y, Some(x))
        }
    };
    let fs = measured.fs();
    let ts = measured.ts();

    let d = &cfg.design;
    let freqs: Vec<f64> = (0..d.points).map(|i| d.f_max * i as f64 / (d.points - 1) as f64).collect();
    let h = sos_linear_response(&fitted, &freqs).stage("design")?;
    let ls = LsOptions {
        mc_draws: Some(d.draws),
        seed,
        ..LsOptions::default()
    };
    let inv = lsfir(&h, d.order, d.delay, fs, &ls).stage("design")?;
    let low = kaiser_lowpass(d.lowpass_order, d.cutoff, fs, d.beta).stage("design")?;
    let flt = cascade_fir(&inv.filter, &low).stage("design")?;
    let n0 = flt.delay_n0();

    let closed = fir_unc_filter(&measured, &flt).stage("filter")?;
    let noise = measured.unc().clone();
    let smc_cfg = SmcConfig {
        draws: cfg.smc.draws,
        block: cfg.smc.block,
        seed,
    };
    let smc = smc_filter(measured.values(), ts, &noise, &flt, &smc_cfg).stage("smc")?;
    let transient = flt.transient_len();

    let spec = resolved(&gum_dft(&measured).stage("bound")?, d.bound_kappa).stage("bound")?;
    let grid = spec.grid().expect("spectrum of a time series has a grid");
    let mut hb = sos_freq_resp(&fitted, spec.freqs());
    if let Some(k) = grid.nyquist() {
        let v = hb[k];
        hb[k] = num_complex::Complex64::new(v.norm().copysign(v.re), 0.0);
    }
    let bound = dynamic_error_bound(&flt, &hb, &spec, band_rad(d.band)).stage("bound")?;

    let mut report = Report::new("ibp");
    let su = fitted.std_unc();
    report.value_u("sensor.S0", fitted.s0, su[0]);
    report.value_u("sensor.delta", fitted.delta, su[1]);
    report.value_u("sensor.f0", fitted.f0, su[2]);
    report.value("fir.residual", inv.residual);
    report.count("fir.taps", flt.b().len());
    report.count("fir.delay_samples", n0);
    if cfg.iir.enabled {
        let ic = &cfg.iir;
        let iir = lsiir(&h, ic.nb, ic.na, ic.delay, fs, ic.max_iter, &LsOptions::default()).stage("design-iir")?;
        report.value("iir.residual", iir.residual);
        report.flag("iir.stable", isstable(&iir.filter));
        report.flag("iir.stabilized", iir.stabilized);
        report.flag("iir.converged", iir.converged);
    }
    let u_closed_form = closed.std_unc();
    let u_smc = smc.std_unc();
    report.count("smc.draws", smc_cfg.draws);
    report.count("transient_samples", transient);
    let discrepancy = u_closed_form
        .iter()
        .zip(&u_smc)
        .skip(transient)
        .map(|(a, b)| (a - b).abs() / a)
        .fold(0.0, f64::max);
    report.value("smc.max_relative_discrepancy", discrepancy);
    report.value("dynamic_error_bound", bound.total());
    report.value("dynamic_error_bound.kappa", d.bound_kappa);
    report.value("dynamic_error_bound.passband", bound.passband);
    report.value("dynamic_error_bound.transition", bound.transition);
    report.value("dynamic_error_bound.stopband", bound.stopband);
    let rms_error = truth.as_ref().map(|x| {
        let t = delayed(x, n0);
        let e = rms_diff(&closed.values()[transient..], &t[transient..]);
        report.value("estimate.rms_error", e);
        e
    });

    let (values, _, _, unc) = closed.into_parts();
    let estimate = TimeSeriesU::new(values, ts, measured.t0() - n0 as f64 * ts, unc).stage("filter")?;
    let cal_spec = SpectrumU::from_complex(
        cal.values(),
        cal.freqs().to_vec(),
        cal.cov().cloned().unwrap_or_else(|| Cov::zeros(2 * cal.len(), 2 * cal.len())),
        None,
    )
    .stage("fit")?;
    Ok(Outcome {
        artifacts: Artifacts {
            estimate: Some(estimate),
            spectrum: Some(cal_spec),
            filter: Some(flt),
            report,
        },
        fitted,
        u_closed_form,
        u_smc,
        transient,
        bound: bound.total(),
        rms_error,
    })
}

/// Response on a frequency grid with independent relative noise on the
/// real and imaginary parts.
fn simulate_calibration(p: &SosParams, c: &Calibration, seed: u64) -> dynunc::Result<FreqRespData> {
    let freqs: Vec<f64> = (0..c.points)
        .map(|i| c.f_min + (c.f_max - c.f_min) * i as f64 / (c.points - 1) as f64)
        .collect();
    let exact = sos_freq_resp(p, &freqs);
    let m = freqs.len();
    let mut rng = draw_rng(seed, u64::MAX);
    let mut cov = Cov::zeros(2 * m, 2 * m);
    let values = exact
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let u = c.noise * h.norm();
            cov[(k, k)] = u * u;
            cov[(m + k, m + k)] = u * u;
            h + num_complex::Complex64::new(u * std_normal(&mut rng), u * std_normal(&mut rng))
        })
        .collect();
    FreqRespData::new(freqs, values, Some(cov))
}

/// Measurand and sensor output in periodic steady state, with noise added
/// to the output.
fn simulate_measurement(p: &SosParams, s: &Signal, seed: u64) -> Result<(TimeSeriesU, Vec<f64>)> {
    let n = (s.fs * s.duration).round() as usize;
    let ts = 1.0 / s.fs;
    let harmonics: Vec<(f64, f64, f64)> = s
        .amplitudes
        .iter()
        .zip(&s.phases)
        .enumerate()
        .map(|(k, (a, ph))| ((k + 1) as f64 * s.rate, *a, *ph))
        .collect();
    let freqs: Vec<f64> = harmonics.iter().map(|h| h.0).collect();
    let resp = sos_freq_resp(p, &freqs);
    let t = |i: usize| i as f64 * ts;
    let x: Vec<f64> = (0..n)
        .map(|i| s.mean + harmonics.iter().map(|(f, a, ph)| a * (2.0 * PI * f * t(i) + ph).cos()).sum::<f64>())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            p.s0 * s.mean
                + harmonics
                    .iter()
                    .zip(&resp)
                    .map(|((f, a, ph), h)| a * h.norm() * (2.0 * PI * f * t(i) + ph + h.arg()).cos())
                    .sum::<f64>()
        })
        .collect();
    let y = add_noise(&TimeSeriesU::exact(y, ts).stage("simulate")?, &Uncertainty::White(s.noise), seed)
        .stage("simulate")?;
    Ok((y, x))
}
