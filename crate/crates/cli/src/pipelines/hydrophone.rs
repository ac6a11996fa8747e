//! Deconvolution of a hydrophone measurement in the frequency domain.
//!
//! The spectrum of the measured voltage is divided by the calibrated
//! hydrophone response and multiplied by a low-pass, then transformed back;
//! the pressure peaks are read off with their uncertainties. Without the
//! low-pass the division amplifies high-frequency noise.

use std::path::{Path, PathBuf};

use dynunc::dft::{dft_deconv, dft_multiply, gum_dft, gum_idft};
use dynunc::filter::dynamic_error_bound_response;
use dynunc::signals::{add_noise, shock_like};
use dynunc::{Cov, SosParams, SpectrumU, TimeSeriesU, Uncertainty};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{apply_response, band_rad, resolved, rms_diff, sensor_spectrum, zero_phase_lowpass};
use crate::config::{check, require_file, resolve, StageConfig};
use crate::error::{Result, Stage};
use crate::io::{read_timeseries_csv, Artifacts, Report};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Input,
    pub signal: Signal,
    pub sensor: Sensor,
    pub lowpass: Lowpass,
    pub deconv: Deconv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Input {
    /// Measured hydrophone voltage; simulated from `signal` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub fs: f64,
    pub samples: usize,
    pub t0: f64,
    pub sigma: f64,
    /// Peak pressure.
    pub amplitude: f64,
    /// Noise standard deviation on the measured voltage.
    pub noise: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            fs: 100e6,
            samples: 1024,
            t0: 2e-6,
            sigma: 20e-9,
            amplitude: 1.0,
            noise: 2e-3,
        }
    }
}

/// Calibrated hydrophone with independent standard uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensor {
    pub s0: f64,
    pub delta: f64,
    pub f0: f64,
    pub u_s0: f64,
    pub u_delta: f64,
    pub u_f0: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor {
            s0: 1.0,
            delta: 0.3,
            f0: 12.5e6,
            u_s0: 0.01,
            u_delta: 0.005,
            u_f0: 0.1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lowpass {
    pub enabled: bool,
    pub order: usize,
    pub cutoff: f64,
    pub beta: f64,
}

impl Default for Lowpass {
    fn default() -> Self {
        Lowpass {
            enabled: true,
            order: 64,
            cutoff: 15e6,
            beta: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Deconv {
    pub mag_floor: f64,
    /// Band edges in Hz used to split the dynamic error bound.
    pub band: [f64; 2],
    /// Ratio of output to input noise variance above which a warning is
    /// issued.
    pub inflation_limit: f64,
    /// Signal-to-noise ratio below which measured bins are left out of the
    /// dynamic error bound.
    pub bound_kappa: f64,
}

impl Default for Deconv {
    fn default() -> Self {
        Deconv {
            mag_floor: 1e-6,
            band: [10e6, 20e6],
            inflation_limit: 10.0,
            bound_kappa: 3.0,
        }
    }
}

impl StageConfig for Config {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.input.measurement, base);
    }

    fn validate(&self) -> Result<()> {
        require_file(&self.input.measurement, "input.measurement")?;
        check(self.signal.samples <= 4096, || "signal.samples exceeds 4096".into())?;
        check(self.deconv.band[0] <= self.deconv.band[1], || "deconv.band must be increasing".into())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Artifacts,
    /// `mean(u_out²)·S0²/mean(u_in²)`.
    pub variance_ratio: f64,
    pub inflation_flagged: bool,
    pub peak_max: (f64, f64),
    pub peak_min: (f64, f64),
    pub bound: f64,
    pub rms_error: Option<f64>,
}

pub fn run(cfg: &Config, seed: u64) -> Result<Outcome> {
    let s = &cfg.signal;
    let c = &cfg.sensor;
    let cov = Cov::from_diagonal(&nalgebra::DVector::from_vec(vec![c.u_s0 * c.u_s0, c.u_delta * c.u_delta, c.u_f0 * c.u_f0]));
    let p = SosParams::new(c.s0, c.delta, c.f0, cov).stage("sensor")?;

    let (measured, truth) = match &cfg.input.measurement {
        Some(path) => (read_timeseries_csv(path)?, None),
        None => {
            let ts = 1.0 / s.fs;
            let x = shock_like(s.t0, s.sigma, s.amplitude, s.fs, s.samples as f64 * ts).stage("simulate")?;
            let grid = dynunc::DftGrid { n: x.len(), ts };
            let h = sensor_spectrum(&SosParams::exact(c.s0, c.delta, c.f0).stage("simulate")?, grid).stage("simulate")?;
            let y = apply_response(x.values(), ts, &h)?;
            let y = TimeSeriesU::exact(y, ts).stage("simulate")?;
            let y = add_noise(&y, &Uncertainty::White(s.noise), seed).stage("simulate")?;
            (y, Some(x.values().to_vec()))
        }
    };
    let ts = measured.ts();
    let grid = dynunc::DftGrid { n: measured.len(), ts };

    let f = gum_dft(&measured).stage("dft")?;
    let h = sensor_spectrum(&p, grid).stage("sensor")?;
    let d = &cfg.deconv;
    let mut spec = dft_deconv(&f, &h, d.mag_floor).stage("deconv")?;
    let low: Vec<Complex64> = if cfg.lowpass.enabled {
        let lp = &cfg.lowpass;
        zero_phase_lowpass(lp.order, lp.cutoff, lp.beta, grid).stage("lowpass")?
    } else {
        vec![Complex64::new(1.0, 0.0); f.bins()]
    };
    if cfg.lowpass.enabled {
        let l = SpectrumU::exact(&low, f.freqs().to_vec(), Some(grid)).stage("lowpass")?;
        spec = dft_multiply(&spec, &l).stage("lowpass")?;
    }
    let est = gum_idft(&spec, measured.len()).stage("idft")?;

    let u_out = est.variances();
    let u_in = measured.variances();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let variance_ratio = mean(&u_out) * p.s0 * p.s0 / mean(&u_in);

    let values = est.values();
    let sd = est.std_unc();
    let imax = argbest(values, |a, b| a > b);
    let imin = argbest(values, |a, b| a < b);
    let peak_max = (values[imax], sd[imax]);
    let peak_min = (values[imin], sd[imin]);

    let hv = h.values();
    let g: Vec<Complex64> = hv.iter().zip(&low).map(|(h, l)| l / h).collect();
    let x = resolved(&f, d.bound_kappa).stage("bound")?;
    let bound = dynamic_error_bound_response(&g, 0, &hv, &x, band_rad(d.band)).stage("bound")?;

    let mut report = Report::new("hydrophone");
    report.flag("lowpass.enabled", cfg.lowpass.enabled);
    report.value_u("peak.max", peak_max.0, peak_max.1);
    report.value("peak.max_time", est.t0() + imax as f64 * ts);
    report.value_u("peak.min", peak_min.0, peak_min.1);
    report.value("peak.min_time", est.t0() + imin as f64 * ts);
    report.value("noise.variance_ratio", variance_ratio);
    report.value("dynamic_error_bound", bound.total());
    report.value("dynamic_error_bound.kappa", d.bound_kappa);
    report.value("dynamic_error_bound.passband", bound.passband);
    report.value("dynamic_error_bound.transition", bound.transition);
    report.value("dynamic_error_bound.stopband", bound.stopband);
    let rms_error = truth.as_ref().map(|x| {
        let e = rms_diff(values, x);
        report.value("estimate.rms_error", e);
        e
    });
    let inflation_flagged = variance_ratio > d.inflation_limit;
    if inflation_flagged {
        report.warn(format!(
            "noise variance inflated {variance_ratio:.1}-fold by the deconvolution; enable or lower the low-pass"
        ));
    }

    Ok(Outcome {
        artifacts: Artifacts {
            estimate: Some(est),
            spectrum: Some(spec),
            filter: None,
            report,
        },
        variance_ratio,
        inflation_flagged,
        peak_max,
        peak_min,
        bound: bound.total(),
        rms_error,
    })
}

fn argbest(v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if better(*x, v[best]) {
            best = i;
        }
    }
    best
}
