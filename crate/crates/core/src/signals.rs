//! Test signals: shock-like doublet, Gaussian pulse, rectangles, pulse
//! trains and sinusoids, plus seeded additive noise.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mc::{draw_rng, std_normal, GaussianSampler};
use crate::types::{Cov, TimeSeriesU, Uncertainty};

/// Shape of the negative lobe of [`shock_like`]: amplitude ratio `r`, delay
/// `d = delay_factor·σ` and width `w·σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShockShape {
    pub r: f64,
    pub delay_factor: f64,
    pub w: f64,
}

impl Default for ShockShape {
    fn default() -> Self {
        ShockShape {
            r: 0.4,
            delay_factor: 2.0,
            w: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    Shock { t0: f64, sigma: f64, m0: f64, shape: ShockShape },
    Gauss { t0: f64, sigma: f64, m0: f64 },
    /// `height` on `[t0, t1)`.
    Rect { t0: f64, t1: f64, height: f64 },
    /// `count` rectangles of `width`, the first starting at `t0`, repeated
    /// every `period`.
    SquarePulse { t0: f64, width: f64, period: f64, count: usize, height: f64 },
    /// `A·sin(2πft + φ)`.
    Sine { amplitude: f64, freq: f64, phase: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub fs: f64,
    pub duration: f64,
}

impl SignalSpec {
    pub fn new(kind: SignalKind, fs: f64, duration: f64) -> Self {
        SignalSpec { kind, fs, duration }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidParameter(format!("fs must be > 0, got {}", self.fs)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} must be > 0, got {v}")));
        match &self.kind {
            SignalKind::Shock { sigma, shape, .. } => {
                if !(*sigma > 0.0) {
                    return bad("sigma", *sigma);
                }
                if !(shape.w > 0.0) {
                    return bad("lobe width factor", shape.w);
                }
            }
            SignalKind::Gauss { sigma, .. } if !(*sigma > 0.0) => return bad("sigma", *sigma),
            SignalKind::Rect { t0, t1, .. } if !(t1 > t0) => return bad("width", t1 - t0),
            SignalKind::SquarePulse { width, period, count, .. } => {
                if !(*width > 0.0) {
                    return bad("width", *width);
                }
                if *count > 1 && !(*period >= *width) {
                    return Err(Error::InvalidParameter("period must be >= width".into()));
                }
            }
            SignalKind::Sine { freq, .. } if !(*freq >= 0.0) => return bad("frequency", *freq),
            _ => {}
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn gauss(t: f64, t0: f64, sigma: f64) -> f64 {
    (-(t - t0).powi(2) / (2.0 * sigma * sigma)).exp()
}

fn shock_value(t: f64, t0: f64, sigma: f64, m0: f64, shape: &ShockShape) -> f64 {
    let d = shape.delay_factor * sigma;
    m0 * gauss(t, t0, sigma) - shape.r * m0 * gauss(t, t0 + d, shape.w * sigma)
}

/// Samples `spec` at `t_n = n/fs`, `n = 0..round(duration·fs)`.
pub fn primitive_signal(spec: &SignalSpec) -> Result<TimeSeriesU> {
    spec.validate()?;
    let n = spec.len();
    if n < 1 {
        return Err(Error::InvalidParameter("duration shorter than one sample".into()));
    }
    let ts = 1.0 / spec.fs;
    let t = |i: usize| i as f64 / spec.fs;
    let values: Vec<f64> = match &spec.kind {
        SignalKind::Shock { t0, sigma, m0, shape } => {
            if t0 + 5.0 * sigma >= spec.duration || t0 - 5.0 * sigma < 0.0 {
                log::warn!("shock pulse at t0 = {t0} s with sigma = {sigma} s is truncated by the window");
            }
            (0..n).map(|i| shock_value(t(i), *t0, *sigma, *m0, shape)).collect()
        }
        SignalKind::Gauss { t0, sigma, m0 } => (0..n).map(|i| m0 * gauss(t(i), *t0, *sigma)).collect(),
        SignalKind::Rect { t0, t1, height } => (0..n)
            .map(|i| if t(i) >= *t0 && t(i) < *t1 { *height } else { 0.0 })
            .collect(),
        SignalKind::SquarePulse {
            t0,
            width,
            period,
            count,
            height,
        } => (0..n)
            .map(|i| {
                let ti = t(i);
                let on = (0..*count).any(|c| {
                    let start = t0 + c as f64 * period;
                    ti >= start && ti < start + width
                });
                if on {
                    *height
                } else {
                    0.0
                }
            })
            .collect(),
        SignalKind::Sine { amplitude, freq, phase } => (0..n)
            .map(|i| amplitude * (2.0 * PI * freq * t(i) + phase).sin())
            .collect(),
    };
    TimeSeriesU::exact(values, ts)
}

/// Gaussian doublet resembling a shock excitation: a pulse of height `m0`
/// at `t0` followed by a smaller, wider pulse of opposite sign.
pub fn shock_like(t0: f64, sigma: f64, m0: f64, fs: f64, duration: f64) -> Result<TimeSeriesU> {
    shock_like_with(t0, sigma, m0, fs, duration, ShockShape::default())
}

pub fn shock_like_with(t0: f64, sigma: f64, m0: f64, fs: f64, duration: f64, shape: ShockShape) -> Result<TimeSeriesU> {
    primitive_signal(&SignalSpec::new(SignalKind::Shock { t0, sigma, m0, shape }, fs, duration))
}

/// Adds seeded zero-mean normal noise with the given uncertainty and folds
/// it into the uncertainty of `x`.
pub fn add_noise(x: &TimeSeriesU, sigma: &Uncertainty, seed: u64) -> Result<TimeSeriesU> {
    let n = x.len();
    match sigma {
        Uncertainty::White(s) if !(*s >= 0.0) => {
            return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {s}")))
        }
        Uncertainty::Pointwise(v) if v.len() != n => {
            return Err(Error::Dimension(format!("{} noise levels for {n} samples", v.len())))
        }
        Uncertainty::Pointwise(v) if v.iter().any(|s| !(*s >= 0.0)) => {
            return Err(Error::InvalidParameter("noise levels must be >= 0".into()))
        }
        _ => {}
    }
    if sigma.is_zero() {
        return Ok(x.clone());
    }
    let mut rng = draw_rng(seed, 0);
    let noise: Vec<f64> = match sigma {
        Uncertainty::White(s) => (0..n).map(|_| s * std_normal(&mut rng)).collect(),
        Uncertainty::Pointwise(v) => v.iter().map(|s| s * std_normal(&mut rng)).collect(),
        Uncertainty::Full(u) => GaussianSampler::new(&vec![0.0; n], u)?.sample(&mut rng),
    };
    let values: Vec<f64> = x.values().iter().zip(&noise).map(|(a, b)| a + b).collect();
    let unc = combine(x.unc(), sigma, n);
    x.clone().with_values(values)?.with_unc(unc)
}

/// Uncertainty of the sum of two independent noise terms.
fn combine(a: &Uncertainty, b: &Uncertainty, n: usize) -> Uncertainty {
    use Uncertainty::*;
    match (a, b) {
        (White(x), White(y)) => White(x.hypot(*y)),
        (Full(_), _) | (_, Full(_)) => {
            let mut u = Cov::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    u[(i, j)] = a.covariance(i, j) + b.covariance(i, j);
                }
            }
            Full(u)
        }
        _ => Pointwise((0..n).map(|i| (a.variance(i) + b.variance(i)).sqrt()).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doublet_without_second_lobe_is_gauss() {
        let shape = ShockShape { r: 0.0, ..Default::default() };
        let a = shock_like_with(1e-3, 5e-5, 2.0, 1e6, 2e-3, shape).unwrap();
        let b = primitive_signal(&SignalSpec::new(
            SignalKind::Gauss { t0: 1e-3, sigma: 5e-5, m0: 2.0 },
            1e6,
            2e-3,
        ))
        .unwrap();
        assert_eq!(a.values(), b.values());
        let (imax, vmax) = a
            .values()
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        assert_eq!(imax, 1000);
        assert_eq!(*vmax, 2.0);
    }

    #[test]
    fn doublet_has_negative_lobe() {
        let x = shock_like(1e-3, 5e-5, 1.0, 1e6, 2e-3).unwrap();
        let min = x.values().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min < -0.2);
    }

    #[test]
    fn rect_is_exact() {
        let x = primitive_signal(&SignalSpec::new(SignalKind::Rect { t0: 0.25, t1: 0.5, height: 3.0 }, 16.0, 1.0)).unwrap();
        for (i, v) in x.values().iter().enumerate() {
            assert_eq!(*v, if (4..8).contains(&i) { 3.0 } else { 0.0 });
        }
    }

    #[test]
    fn square_pulse_train() {
        let spec = SignalSpec::new(
            SignalKind::SquarePulse { t0: 0.0, width: 2.0, period: 5.0, count: 3, height: 1.0 },
            1.0,
            20.0,
        );
        let x = primitive_signal(&spec).unwrap();
        let on: Vec<usize> = x.values().iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(on, vec![0, 1, 5, 6, 10, 11]);
    }

    #[test]
    fn sine_samples() {
        let spec = SignalSpec::new(SignalKind::Sine { amplitude: 2.0, freq: 3.0, phase: 0.4 }, 50.0, 1.0);
        let x = primitive_signal(&spec).unwrap();
        for (i, v) in x.values().iter().enumerate() {
            let t = i as f64 / 50.0;
            assert!((v - 2.0 * (2.0 * PI * 3.0 * t + 0.4).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(primitive_signal(&SignalSpec::new(SignalKind::Gauss { t0: 0.0, sigma: 0.0, m0: 1.0 }, 1.0, 1.0)).is_err());
        assert!(primitive_signal(&SignalSpec::new(SignalKind::Sine { amplitude: 1.0, freq: 1.0, phase: 0.0 }, 0.0, 1.0)).is_err());
        assert!(primitive_signal(&SignalSpec::new(SignalKind::Rect { t0: 1.0, t1: 1.0, height: 1.0 }, 1.0, 3.0)).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = TimeSeriesU::new(vec![1.0, 2.0], 1.0, 0.0, Uncertainty::White(0.1)).unwrap();
        assert_eq!(add_noise(&x, &Uncertainty::White(0.0), 5).unwrap(), x);
    }

    #[test]
    fn noise_is_seeded_and_recorded() {
        let x = TimeSeriesU::exact(vec![0.0; 64], 1.0).unwrap();
        let a = add_noise(&x, &Uncertainty::White(0.3), 11).unwrap();
        let b = add_noise(&x, &Uncertainty::White(0.3), 11).unwrap();
        let c = add_noise(&x, &Uncertainty::White(0.3), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
        assert_eq!(a.unc(), &Uncertainty::White(0.3));
        let d = add_noise(&a, &Uncertainty::White(0.4), 1).unwrap();
        assert!(matches!(d.unc(), Uncertainty::White(s) if (s - 0.5).abs() < 1e-15));
    }
}
