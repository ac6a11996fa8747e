//! Parametric calibration of an accelerometer from a shock measurement.
//!
//! The charge sensitivity `S = F_q/F_a` is formed bin by bin from the
//! spectra of the measured acceleration and charge, the second-order model
//! is fitted to it, and a Monte Carlo simulation of the discretized sensor
//! checks that the measured charge is consistent with the fitted model.

use std::path::{Path, PathBuf};

use dynunc::design::isstable;
use dynunc::dft::{dft_deconv, gum_dft, snr_mask};
use dynunc::mc::{draw_rng, for_each_draw, std_normal, GaussianSampler, RunningStats};
use dynunc::signals::{add_noise, shock_like};
use dynunc::sos::{fit_sos, sos_digital_filter, FitSosOptions};
use dynunc::{SosParams, TimeSeriesU, Uncertainty};
use serde::{Deserialize, Serialize};

use crate::config::{check, require_file, resolve, StageConfig};
use crate::error::{CliError, Result, Stage};
use crate::io::{read_timeseries_csv, Artifacts, Report};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub input: Input,
    pub signal: Signal,
    pub sensor: Sensor,
    pub fit: Fit,
    pub validation: Validation,
}

/// Measured signals; when absent they are simulated from `signal` and
/// `sensor`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Input {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub charge: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signal {
    pub fs: f64,
    pub samples: usize,
    pub t0: f64,
    pub sigma: f64,
    /// Peak acceleration in m/s².
    pub amplitude: f64,
    /// Noise standard deviation on the acceleration in m/s².
    pub noise_acceleration: f64,
    /// Noise standard deviation on the charge in pC.
    pub noise_charge: f64,
    /// Rate multiple at which the sensor is simulated before decimation,
    /// so that the simulated charge follows the continuous-time sensor.
    pub oversample: usize,
}

impl Default for Signal {
    fn default() -> Self {
        Signal {
            fs: 4e6,
            samples: 2048,
            t0: 100e-6,
            sigma: 5e-6,
            amplitude: 1000.0,
            noise_acceleration: 0.5,
            noise_charge: 0.2,
            oversample: 32,
        }
    }
}

/// Sensor used to simulate the charge signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensor {
    /// Static sensitivity in pC/(m/s²).
    pub s0: f64,
    pub delta: f64,
    pub f0: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor {
            s0: 0.1,
            delta: 0.05,
            f0: 40e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fit {
    /// Highest frequency used in the fit, in Hz.
    pub f_max: f64,
    /// Minimum magnitude-to-uncertainty ratio of both spectra at a used bin.
    pub kappa: f64,
    pub weighting: bool,
    /// Monte Carlo refits for the parameter covariance.
    pub draws: usize,
    pub mag_floor: f64,
}

impl Default for Fit {
    fn default() -> Self {
        Fit {
            f_max: 100e3,
            kappa: 10.0,
            weighting: true,
            draws: 1000,
            mag_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Validation {
    pub draws: usize,
    /// Coverage factor of the band around the Monte Carlo mean.
    pub k: f64,
}

impl Default for Validation {
    fn default() -> Self {
        Validation { draws: 2000, k: 2.0 }
    }
}

impl StageConfig for Config {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.input.acceleration, base);
        resolve(&mut self.input.charge, base);
    }

    fn validate(&self) -> Result<()> {
        require_file(&self.input.acceleration, "input.acceleration")?;
        require_file(&self.input.charge, "input.charge")?;
        check(self.input.acceleration.is_some() == self.input.charge.is_some(), || {
            "input.acceleration and input.charge must be given together".into()
        })?;
        check(self.signal.samples <= 4096, || "signal.samples exceeds 4096".into())?;
        check(self.validation.draws >= 100, || "validation.draws must be >= 100".into())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub fitted: SosParams,
    /// Fraction of samples of the measured charge inside the Monte Carlo band.
    pub coverage: f64,
    /// Drawn filters that failed the stability check.
    pub unstable: usize,
    /// Parameter draws outside the physical range, redrawn.
    pub rejected: usize,
    pub bins_used: usize,
}

pub fn run(cfg: &Config, seed: u64) -> Result<Outcome> {
    let s = &cfg.signal;
    let (a, q, truth) = match (&cfg.input.acceleration, &cfg.input.charge) {
        (Some(pa), Some(pq)) => {
            let a = read_timeseries_csv(pa)?;
            let q = read_timeseries_csv(pq)?;
            if a.len() != q.len() || (a.ts() - q.ts()).abs() > 1e-9 * a.ts() {
                return Err(CliError::Config("acceleration and charge must share the time grid".into()));
            }
            (a, q, None)
        }
        _ => {
            let (a, q, p) = simulate(cfg, seed)?;
            (a, q, Some(p))
        }
    };
    let fa = gum_dft(&a).stage("dft")?;
    let fq = gum_dft(&q).stage("dft")?;
    let (ma, mq) = (snr_mask(&fa, cfg.fit.kappa), snr_mask(&fq, cfg.fit.kappa));
    let bins: Vec<usize> = (0..fa.bins())
        .filter(|&k| fa.freqs()[k] <= cfg.fit.f_max && ma[k] && mq[k])
        .collect();
    if bins.len() < 3 {
        return Err(CliError::Stage {
            stage: "fit",
            source: dynunc::Error::InvalidParameter(format!("only {} usable bins below f_max", bins.len())),
        });
    }
    let sens = dft_deconv(&fq.select(&bins).stage("dft")?, &fa.select(&bins).stage("dft")?, cfg.fit.mag_floor)
        .stage("deconv")?;
    let opts = FitSosOptions {
        weighting: cfg.fit.weighting,
        draws: cfg.fit.draws,
        seed,
    };
    let fitted = fit_sos(sens.freqs(), &sens.values(), Some(sens.cov()), &opts).stage("fit")?;

    let v = &cfg.validation;
    let mc = validate(&fitted, &a, &q, s, v.draws, seed).stage("validation")?;
    let u: Vec<f64> = mc.std.clone();
    let inside = q
        .values()
        .iter()
        .zip(&mc.mean)
        .zip(&u)
        .filter(|((y, m), u)| (*y - *m).abs() <= v.k * *u)
        .count();
    let coverage = inside as f64 / q.len() as f64;

    let mut report = Report::new("shock");
    let su = fitted.std_unc();
    report.value_u("sensor.S0", fitted.s0, su[0]);
    report.value_u("sensor.delta", fitted.delta, su[1]);
    report.value_u("sensor.f0", fitted.f0, su[2]);
    if let Some(p) = &truth {
        report.value("simulated.S0", p.s0);
        report.value("simulated.delta", p.delta);
        report.value("simulated.f0", p.f0);
    }
    report.count("fit.bins", bins.len());
    report.value("fit.f_max", sens.freqs()[bins.len() - 1]);
    report.count("validation.draws", v.draws);
    report.count("validation.rejected_draws", mc.rejected);
    report.count("validation.unstable_filters", mc.unstable);
    report.value("validation.k", v.k);
    report.value("validation.coverage", coverage);
    if coverage < 0.95 {
        report.warn(format!("measured charge inside the Monte Carlo band at only {:.1}% of samples", 100.0 * coverage));
    }

    let estimate = TimeSeriesU::new(mc.mean, q.ts(), q.t0(), Uncertainty::Pointwise(u)).stage("validation")?;
    Ok(Outcome {
        artifacts: Artifacts {
            estimate: Some(estimate),
            spectrum: Some(sens),
            filter: None,
            report,
        },
        fitted,
        coverage,
        unstable: mc.unstable,
        rejected: mc.rejected,
        bins_used: bins.len(),
    })
}

/// Acceleration and charge of the configured sensor. The sensor runs at
/// `oversample` times the sampling rate, where the bilinear transform is
/// close to the continuous-time response, and both signals are decimated.
fn simulate(cfg: &Config, seed: u64) -> Result<(TimeSeriesU, TimeSeriesU, SosParams)> {
    let s = &cfg.signal;
    let os = s.oversample.max(1);
    let p = SosParams::exact(cfg.sensor.s0, cfg.sensor.delta, cfg.sensor.f0).stage("simulate")?;
    let fine_fs = s.fs * os as f64;
    let a_fine = shock_like(s.t0, s.sigma, s.amplitude, fine_fs, s.samples as f64 / s.fs).stage("simulate")?;
    let flt = sos_digital_filter(&p, fine_fs, Some(p.f0)).stage("simulate")?;
    let q_fine = flt.apply(a_fine.values());
    let ts = 1.0 / s.fs;
    let a = TimeSeriesU::exact(a_fine.values().iter().step_by(os).copied().collect(), ts).stage("simulate")?;
    let q = TimeSeriesU::exact(q_fine.into_iter().step_by(os).collect(), ts).stage("simulate")?;
    let a = add_noise(&a, &Uncertainty::White(s.noise_acceleration), seed).stage("simulate")?;
    let q = add_noise(&q, &Uncertainty::White(s.noise_charge), seed.wrapping_add(1)).stage("simulate")?;
    Ok((a, q, p))
}

struct McBand {
    mean: Vec<f64>,
    std: Vec<f64>,
    unstable: usize,
    rejected: usize,
}

/// Charge predicted by sensors drawn from the fitted parameter distribution
/// driven by draws of the measured acceleration, plus charge noise.
fn validate(p: &SosParams, a: &TimeSeriesU, q: &TimeSeriesU, s: &Signal, draws: usize, seed: u64) -> dynunc::Result<McBand> {
    let sampler = GaussianSampler::new(&p.as_vec(), p.cov())?;
    let fs = a.fs();
    let ua = noise_sd(a, s.noise_acceleration);
    let uq = noise_sd(q, s.noise_charge);
    let n = a.len();
    let mut stats = RunningStats::new(n);
    let mut unstable = 0;
    let mut rejected = 0;
    let stream = seed.wrapping_add(2);
    for_each_draw(
        draws,
        |i| -> dynunc::Result<(Vec<f64>, bool, usize)> {
            let mut rng = draw_rng(stream, i as u64);
            let mut redrawn = 0;
            let theta = loop {
                let t = sampler.sample(&mut rng);
                if t[0] > 0.0 && t[1] > 0.0 && t[2] > 0.0 && t[2] < fs / 2.0 {
                    break t;
                }
                redrawn += 1;
                if redrawn > 1000 {
                    return Err(dynunc::Error::Rejection { rejected: redrawn, accepted: 0 });
                }
            };
            let pd = SosParams::exact(theta[0], theta[1], theta[2])?;
            let flt = sos_digital_filter(&pd, fs, Some(pd.f0))?;
            let stable = isstable(&flt);
            let x: Vec<f64> = a.values().iter().zip(&ua).map(|(v, u)| v + u * std_normal(&mut rng)).collect();
            let mut y = flt.apply(&x);
            for (v, u) in y.iter_mut().zip(&uq) {
                *v += u * std_normal(&mut rng);
            }
            Ok((y, stable, redrawn))
        },
        |_, r| {
            let (y, stable, redrawn) = r?;
            if !stable {
                unstable += 1;
            }
            rejected += redrawn;
            stats.update(&y)
        },
    )?;
    Ok(McBand {
        mean: stats.mean().to_vec(),
        std: stats.std(),
        unstable,
        rejected,
    })
}

/// Noise level per sample: the stated uncertainty of a read signal, else the
/// configured level.
fn noise_sd(x: &TimeSeriesU, configured: f64) -> Vec<f64> {
    if x.unc().is_zero() {
        vec![configured; x.len()]
    } else {
        x.std_unc()
    }
}
