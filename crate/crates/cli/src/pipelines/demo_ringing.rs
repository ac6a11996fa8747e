//! A lightly damped sensor rings after a shock; a deconvolution filter
//! designed from its model removes the ringing.

use dynunc::design::{kaiser_lowpass, lsfir};
use dynunc::dft::gum_dft;
use dynunc::filter::{dynamic_error_bound, fir_unc_filter, DynamicErrorBound};
use dynunc::signals::{add_noise, shock_like};
use dynunc::sos::{sos_freq_resp, sos_linear_response};
use dynunc::{DigitalFilterU, LsOptions, SosParams, TimeSeriesU, Uncertainty};
use serde::{Deserialize, Serialize};

use super::{
    apply_response, band_rad, best_scaled_shift_rms, cascade_fir, circular_delay, delayed, periodic_apply, rms, rms_diff,
    sensor_spectrum,
};
use crate::config::{check, StageConfig};
use crate::error::{Result, Stage};
use crate::io::{Artifacts, Report};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub signal: Signal,
    pub sensor: Sensor,
    pub design: Design,
}

/// Shock measurand and sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub fs: f64,
    pub samples: usize,
    /// Pulse centre in s.
    pub t0: f64,
    /// Pulse width in s.
    pub sigma: f64,
    pub amplitude: f64,
    /// Standard deviation of the white noise on the sensor output.
    pub noise: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            fs: 100e3,
            samples: 1024,
            t0: 1e-3,
            sigma: 25e-6,
            amplitude: 1.0,
            noise: 1e-4,
        }
    }
}

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
            delta: 0.02,
            f0: 8e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Design {
    pub order: usize,
    /// Delay of the inverse filter in samples.
    pub delay: usize,
    /// Upper end of the fitted band in Hz.
    pub f_max: f64,
    pub points: usize,
    pub lowpass_order: usize,
    pub cutoff: f64,
    pub beta: f64,
    /// Band edges in Hz used to split the dynamic error bound.
    pub band: [f64; 2],
}

impl Default for Design {
    fn default() -> Self {
        Design {
            order: 64,
            delay: 32,
            f_max: 30e3,
            points: 300,
            lowpass_order: 64,
            cutoff: 20e3,
            beta: 8.0,
            band: [15e3, 30e3],
        }
    }
}

impl StageConfig for Config {
    fn validate(&self) -> Result<()> {
        let s = &self.signal;
        check(s.samples >= 16, || format!("signal.samples = {} must be >= 16", s.samples))?;
        check(s.samples <= 4096, || format!("signal.samples = {} exceeds 4096", s.samples))?;
        check(self.design.f_max < s.fs / 2.0, || "design.f_max must be below fs/2".into())?;
        check(self.design.band[0] <= self.design.band[1], || "design.band must be increasing".into())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Artifacts,
    /// RMS error of the best scaled and shifted raw output.
    pub rms_raw: f64,
    pub rms_deconvolved: f64,
    /// Maximum pointwise error of the noise-free deconvolution.
    pub max_error_clean: f64,
    pub bound: DynamicErrorBound,
}

impl Outcome {
    pub fn ratio(&self) -> f64 {
        self.rms_deconvolved / self.rms_raw
    }

    pub fn bound_holds(&self) -> bool {
        self.bound.bound.iter().all(|b| self.max_error_clean <= *b)
    }
}

pub fn run(cfg: &Config, seed: u64) -> Result<Outcome> {
    let s = &cfg.signal;
    let d = &cfg.design;
    let ts = 1.0 / s.fs;
    let duration = s.samples as f64 * ts;
    let x = shock_like(s.t0, s.sigma, s.amplitude, s.fs, duration).stage("signal")?;
    let p = SosParams::exact(cfg.sensor.s0, cfg.sensor.delta, cfg.sensor.f0).stage("sensor")?;

    let grid = dynunc::DftGrid { n: x.len(), ts };
    let h_bins = sensor_spectrum(&p, grid).stage("sensor")?;
    let y_clean = apply_response(x.values(), ts, &h_bins)?;
    let y = add_noise(&TimeSeriesU::exact(y_clean.clone(), ts).stage("sensor")?, &Uncertainty::White(s.noise), seed)
        .stage("sensor")?;

    let freqs: Vec<f64> = (0..d.points).map(|i| d.f_max * i as f64 / (d.points - 1) as f64).collect();
    let h = sos_linear_response(&p, &freqs).stage("design")?;
    let inv = lsfir(&h, d.order, d.delay, s.fs, &LsOptions::default()).stage("design")?;
    let low = kaiser_lowpass(d.lowpass_order, d.cutoff, s.fs, d.beta).stage("design")?;
    let flt: DigitalFilterU = cascade_fir(&inv.filter, &low).stage("design")?;
    let n0 = flt.delay_n0();

    let est = fir_unc_filter(&y, &flt).stage("filter")?;
    let truth = delayed(x.values(), n0);
    let rms_deconvolved = rms_diff(est.values(), &truth);
    let (rms_raw, gain, shift) = best_scaled_shift_rms(y.values(), x.values(), s.samples / 4);

    // The bound holds for the periodic steady state the DFT describes.
    let clean = periodic_apply(&flt, &y_clean);
    let truth_periodic = circular_delay(x.values(), n0);
    let max_error_clean = clean.iter().zip(&truth_periodic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let spec_clean = gum_dft(&TimeSeriesU::exact(y_clean, ts).stage("bound")?).stage("bound")?;
    let mut h_exact = sos_freq_resp(&p, spec_clean.freqs());
    if let Some(k) = grid.nyquist() {
        h_exact[k] = h_bins.value(k);
    }
    let bound = dynamic_error_bound(&flt, &h_exact, &spec_clean, band_rad(d.band)).stage("bound")?;

    let mut report = Report::new("demo_ringing");
    report.value("sensor.f0", p.f0);
    report.value("sensor.delta", p.delta);
    report.count("filter.taps", flt.b().len());
    report.count("filter.delay_samples", n0);
    report.value("design.residual", inv.residual);
    report.value("raw.rms_error", rms_raw);
    report.value("raw.best_gain", gain);
    report.text("raw.best_shift_samples", shift.to_string());
    report.value("deconvolved.rms_error", rms_deconvolved);
    report.value("deconvolved.rms_error_ratio", rms_deconvolved / rms_raw);
    report.value("measurand.rms", rms(x.values()));
    report.value("dynamic_error_bound", bound.total());
    report.value("dynamic_error_bound.passband", bound.passband);
    report.value("dynamic_error_bound.transition", bound.transition);
    report.value("dynamic_error_bound.stopband", bound.stopband);
    report.value("noise_free.max_error", max_error_clean);
    report.flag("noise_free.bound_holds", bound.bound.iter().all(|b| max_error_clean <= *b));

    let (values, _, _, unc) = est.into_parts();
    let estimate = TimeSeriesU::new(values, ts, -(n0 as f64) * ts, unc).stage("filter")?;
    let spectrum = gum_dft(&y).stage("dft")?;
    Ok(Outcome {
        artifacts: Artifacts {
            estimate: Some(estimate),
            spectrum: Some(spectrum),
            filter: Some(flt),
            report,
        },
        rms_raw,
        rms_deconvolved,
        max_error_clean,
        bound,
    })
}
