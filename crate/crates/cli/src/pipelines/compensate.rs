//! Compensation of a sensor by an empirical transfer function.
//!
//! A reference measurement and a simultaneous sensor measurement give the
//! compensation function `F_ref/F_sensor`. Bins where either spectrum is not
//! resolved above its noise are discarded; the rest is applied to a new
//! sensor measurement.

use std::path::{Path, PathBuf};

use dynunc::dft::{dft_multiply, dft_transferfunction, gum_dft, gum_idft, mask_bins, snr_mask};
use dynunc::filter::dynamic_error_bound_response;
use dynunc::signals::{add_noise, shock_like};
use dynunc::{SosParams, TimeSeriesU, Uncertainty};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{apply_response, band_rad, coverage, resolved, rms_diff, sensor_spectrum};
use crate::config::{check, require_file, resolve, StageConfig};
use crate::error::{CliError, Result, Stage};
use crate::io::{read_timeseries_csv, Artifacts, Report};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Input,
    pub signal: Signal,
    pub sensor: Sensor,
    pub transfer: Transfer,
}

/// Measured signals; any that is absent is simulated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Input {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub fs: f64,
    pub samples: usize,
    /// Calibration pulse: centre, width and height.
    pub calibration: [f64; 3],
    /// Pulse of the new measurement: centre, width and height.
    pub measurement: [f64; 3],
    pub noise_reference: f64,
    pub noise_sensor: f64,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            fs: 100e3,
            samples: 1024,
            calibration: [2e-3, 40e-6, 1.0],
            measurement: [4e-3, 60e-6, 0.7],
            noise_reference: 1e-3,
            noise_sensor: 1e-3,
        }
    }
}

/// Sensor used to simulate the sensor outputs.
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
            delta: 0.4,
            f0: 15e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Transfer {
    /// Minimum magnitude-to-uncertainty ratio of a kept bin.
    pub kappa: f64,
    pub mag_floor: f64,
    /// Band edges in Hz used to split the dynamic error bound.
    pub band: [f64; 2],
    /// Signal-to-noise ratio below which measured bins are left out of the
    /// dynamic error bound.
    pub bound_kappa: f64,
}

impl Default for Transfer {
    fn default() -> Self {
        Transfer {
            kappa: 10.0,
            mag_floor: 1e-6,
            band: [10e3, 20e3],
            bound_kappa: 3.0,
        }
    }
}

impl StageConfig for Config {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.input.reference, base);
        resolve(&mut self.input.sensor, base);
        resolve(&mut self.input.measurement, base);
    }

    fn validate(&self) -> Result<()> {
        require_file(&self.input.reference, "input.reference")?;
        require_file(&self.input.sensor, "input.sensor")?;
        require_file(&self.input.measurement, "input.measurement")?;
        check(self.input.reference.is_some() == self.input.sensor.is_some(), || {
            "input.reference and input.sensor must be given together".into()
        })?;
        check(self.signal.samples <= 4096, || "signal.samples exceeds 4096".into())?;
        check(self.transfer.band[0] <= self.transfer.band[1], || "transfer.band must be increasing".into())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub bins_kept: usize,
    pub bound: f64,
    /// RMS error and 2σ coverage against the simulated measurand.
    pub rms_error: Option<f64>,
    pub coverage: Option<f64>,
}

pub fn run(cfg: &Config, seed: u64) -> Result<Outcome> {
    let s = &cfg.signal;
    let ts = 1.0 / s.fs;
    let duration = s.samples as f64 * ts;
    let p = SosParams::exact(cfg.sensor.s0, cfg.sensor.delta, cfg.sensor.f0).stage("simulate")?;
    let grid = dynunc::DftGrid { n: s.samples, ts };
    let sensed = |pulse: [f64; 3], noise: f64, stream: u64| -> Result<(TimeSeriesU, Vec<f64>)> {
        let x = shock_like(pulse[0], pulse[1], pulse[2], s.fs, duration).stage("simulate")?;
        let h = sensor_spectrum(&p, grid).stage("simulate")?;
        let y = apply_response(x.values(), ts, &h)?;
        let y = add_noise(&TimeSeriesU::exact(y, ts).stage("simulate")?, &Uncertainty::White(noise), stream)
            .stage("simulate")?;
        Ok((y, x.values().to_vec()))
    };

    let (reference, sensor) = match (&cfg.input.reference, &cfg.input.sensor) {
        (Some(r), Some(m)) => (read_timeseries_csv(r)?, read_timeseries_csv(m)?),
        _ => {
            let (y, x) = sensed(s.calibration, s.noise_sensor, seed)?;
            let x = TimeSeriesU::exact(x, ts).stage("simulate")?;
            let x = add_noise(&x, &Uncertainty::White(s.noise_reference), seed.wrapping_add(1)).stage("simulate")?;
            (x, y)
        }
    };
    let (measured, truth) = match &cfg.input.measurement {
        Some(path) => (read_timeseries_csv(path)?, None),
        None => {
            let (y, x) = sensed(s.measurement, s.noise_sensor, seed.wrapping_add(2))?;
            (y, Some(x))
        }
    };
    if measured.len() != sensor.len() || (measured.ts() - sensor.ts()).abs() > 1e-9 * sensor.ts() {
        return Err(CliError::Config("measurement must share the time grid of the calibration signals".into()));
    }

    let tc = &cfg.transfer;
    let tf = dft_transferfunction(&reference, &sensor, tc.mag_floor).stage("transfer")?;
    let f_ref = gum_dft(&reference).stage("transfer")?;
    let f_sensor = gum_dft(&sensor).stage("transfer")?;
    let (mr, ms) = (snr_mask(&f_ref, tc.kappa), snr_mask(&f_sensor, tc.kappa));
    let keep: Vec<bool> = mr.iter().zip(&ms).map(|(a, b)| *a && *b).collect();
    let kept = keep.iter().filter(|k| **k).count();
    let tf = mask_bins(&tf, &keep).stage("transfer")?;

    let f_meas = gum_dft(&measured).stage("dft")?;
    let est = gum_idft(&dft_multiply(&f_meas, &tf).stage("compensate")?, measured.len()).stage("idft")?;

    // Sensor response estimated from the unmasked calibration spectra.
    let h: Vec<Complex64> = (0..f_ref.bins()).map(|k| f_sensor.value(k) / f_ref.value(k)).collect();
    let x = resolved(&f_meas, tc.bound_kappa).stage("bound")?;
    let bound = dynamic_error_bound_response(&tf.values(), 0, &h, &x, band_rad(tc.band)).stage("bound")?;

    let mut report = Report::new("compensate");
    report.count("transfer.bins", tf.bins());
    report.count("transfer.bins_kept", kept);
    report.value("transfer.kappa", tc.kappa);
    report.value("dynamic_error_bound", bound.total());
    report.value("dynamic_error_bound.kappa", tc.bound_kappa);
    report.value("dynamic_error_bound.passband", bound.passband);
    report.value("dynamic_error_bound.transition", bound.transition);
    report.value("dynamic_error_bound.stopband", bound.stopband);
    let u = est.std_unc();
    let (rms_error, cov) = match &truth {
        Some(x) => {
            let e = rms_diff(est.values(), x);
            let c = coverage(est.values(), &u, x, 2.0);
            report.value("estimate.rms_error", e);
            report.value("estimate.coverage_2u", c);
            let max_err = est.values().iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            report.value("estimate.max_error", max_err);
            (Some(e), Some(c))
        }
        None => (None, None),
    };
    report.value("estimate.mean_u", u.iter().sum::<f64>() / u.len() as f64);

    Ok(Outcome {
        artifacts: Artifacts {
            estimate: Some(est),
            spectrum: Some(tf),
            filter: None,
            report,
        },
        bins_kept: kept,
        bound: bound.total(),
        rms_error,
        coverage: cov,
    })
}

