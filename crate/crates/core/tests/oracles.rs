//! First-order propagation checked against Monte Carlo on small-uncertainty
//! fixtures.

use std::f64::consts::PI;

use dynunc::dft::{self, amp_phase_to_dft, dft_deconv, dft_multiply, dft_to_amp_phase, gum_dft};
use dynunc::filter::{fir_unc_filter, iir_ss_filter, smc_filter, SmcConfig};
use dynunc::mc::{mc_propagate, McConfig, RunningStats};
use dynunc::propagate::{cumulative_mean_model, linear_propagate};
use dynunc::signals::shock_like;
use dynunc::sos::{sos_digital_filter, SosParams};
use dynunc::{AmpPhaseU, Cov, DigitalFilterU, Error, LinearModel, SpectrumU, TimeSeriesU, Uncertainty};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;

fn max_rel_diag(first_order: &Cov, mc_std: &[f64]) -> f64 {
    let scale = (0..first_order.nrows()).map(|i| first_order[(i, i)]).fold(0.0, f64::max);
    (0..first_order.nrows())
        .filter(|&i| first_order[(i, i)] > 1e-12 * scale)
        .map(|i| (mc_std[i].powi(2) - first_order[(i, i)]).abs() / first_order[(i, i)])
        .fold(0.0, f64::max)
}

fn random_cov(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Cov {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut u = &a * a.transpose() / n as f64 * scale;
    for i in 0..n {
        u[(i, i)] += 0.1 * scale;
    }
    u
}

fn block_diag(a: &Cov, b: &Cov) -> Cov {
    let (n, m) = (a.nrows(), b.nrows());
    let mut u = Cov::zeros(n + m, n + m);
    u.view_mut((0, 0), (n, n)).copy_from(a);
    u.view_mut((n, n), (m, m)).copy_from(b);
    u
}

fn reim_of(v: &[f64]) -> Vec<Complex64> {
    let m = v.len() / 2;
    (0..m).map(|k| Complex64::new(v[k], v[m + k])).collect()
}

fn stack(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

#[test]
fn trapezoid_mean_of_ar1_noise() {
    let n = 5;
    let rho: f64 = 0.9;
    let ux = DMatrix::from_fn(n, n, |i, j| 0.04 * rho.powi((i as i32 - j as i32).abs()));
    let model = cumulative_mean_model(n, 0.1).unwrap();
    let x = vec![1.0, 1.5, 1.2, 0.8, 1.1];
    let (_, uy) = linear_propagate(&model, &x, &ux).unwrap();
    let c = model.sens().clone();
    let mc = mc_propagate(
        |v: &[f64]| Ok::<_, Error>((&c * DVector::from_column_slice(v)).as_slice().to_vec()),
        &x,
        &ux,
        &McConfig::new(DRAWS, 17),
    )
    .unwrap();
    assert!(max_rel_diag(&uy, &mc.std) < 0.02);
}

#[test]
fn random_linear_models_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(k, n) in &[(3, 4), (8, 16), (16, 10)] {
        let c = DMatrix::from_fn(k, n, |_, _| rng.random_range(-2.0..2.0));
        let ux = random_cov(&mut rng, n, 0.5);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, uy) = linear_propagate(&LinearModel::new(c.clone()).unwrap(), &x, &ux).unwrap();
        let mc = mc_propagate(
            |v: &[f64]| Ok::<_, Error>((&c * DVector::from_column_slice(v)).as_slice().to_vec()),
            &x,
            &ux,
            &McConfig::new(DRAWS, 3),
        )
        .unwrap();
        assert!(max_rel_diag(&uy, &mc.std) < 0.02, "{k}x{n}");
    }
}

#[test]
fn mc_error_shrinks_like_inverse_sqrt_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 6;
    let c = DMatrix::from_fn(4, n, |_, _| rng.random_range(-1.0..1.0));
    let ux = random_cov(&mut rng, n, 1.0);
    let x = vec![0.0; n];
    let (_, uy) = linear_propagate(&LinearModel::new(c.clone()).unwrap(), &x, &ux).unwrap();
    // Average the error over independent seeds to tame the spread of a single run.
    let err = |draws: usize| -> f64 {
        (0..12)
            .map(|seed| {
                let mc = mc_propagate(
                    |v: &[f64]| Ok::<_, Error>((&c * DVector::from_column_slice(v)).as_slice().to_vec()),
                    &x,
                    &ux,
                    &McConfig::new(draws, 100 + seed),
                )
                .unwrap();
                (0..4).map(|i| (mc.std[i].powi(2) - uy[(i, i)]).abs() / uy[(i, i)]).sum::<f64>()
            })
            .sum()
    };
    let (e3, e4, e5) = (err(1_000), err(10_000), err(100_000));
    let sqrt10 = 10f64.sqrt();
    for ratio in [e3 / e4, e4 / e5] {
        assert!(ratio > sqrt10 / 2.0 && ratio < sqrt10 * 2.0, "ratio {ratio}");
    }
}

#[test]
fn running_stats_match_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stats = RunningStats::new(1);
    let mut xs = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let v: f64 = 3.0 + 2.0 * dynunc::mc::std_normal(&mut rng);
        xs.push(v);
        stats.update(&[v]).unwrap();
    }
    let mean = xs.iter().sum::<f64>() / DRAWS as f64;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
    assert!((stats.mean()[0] - mean).abs() <= 1e-10 * mean.abs());
    assert!((stats.variance()[0] - var).abs() <= 1e-10 * var);
    assert!((var - 4.0).abs() / 4.0 < 0.02);
}

#[test]
fn dft_of_noisy_shock_matches_monte_carlo() {
    let x = shock_like(2e-4, 1e-5, 1.0, 1e5, 64e-5).unwrap();
    let x = x.with_unc(Uncertainty::White(0.01)).unwrap();
    assert_eq!(x.len(), 64);
    let spec = gum_dft(&x).unwrap();
    let j = dft::dft_matrix(64);
    let mc = mc_propagate(
        |v: &[f64]| Ok::<_, Error>((&j * DVector::from_column_slice(v)).as_slice().to_vec()),
        x.values(),
        &x.covariance(),
        &McConfig::new(DRAWS, 11),
    )
    .unwrap();
    assert!(max_rel_diag(spec.cov(), &mc.std) < 0.03);
}

fn random_spectrum(rng: &mut ChaCha8Rng, m: usize, rel: f64) -> SpectrumU {
    let vals: Vec<Complex64> = (0..m)
        .map(|_| Complex64::from_polar(rng.random_range(0.5..2.0), rng.random_range(-3.0..3.0)))
        .collect();
    let cov = random_cov(rng, 2 * m, rel * rel);
    SpectrumU::from_complex(&vals, (0..m).map(|k| k as f64).collect(), cov, None).unwrap()
}

#[test]
fn multiply_and_deconv_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 16;
    let x = random_spectrum(&mut rng, m, 0.01);
    let h = random_spectrum(&mut rng, m, 0.01);
    let est: Vec<f64> = x.reim().iter().chain(h.reim()).copied().collect();
    let u = block_diag(x.cov(), h.cov());
    let split = |v: &[f64]| (reim_of(&v[..2 * m]), reim_of(&v[2 * m..]));

    let y = dft_multiply(&x, &h).unwrap();
    let mc = mc_propagate(
        |v: &[f64]| {
            let (a, b) = split(v);
            Ok::<_, Error>(stack(&a.iter().zip(&b).map(|(p, q)| p * q).collect::<Vec<_>>()))
        },
        &est,
        &u,
        &McConfig::new(DRAWS, 2),
    )
    .unwrap();
    assert!(max_rel_diag(y.cov(), &mc.std) < 0.03);

    let y = dft_deconv(&x, &h, 1e-6).unwrap();
    let mc = mc_propagate(
        |v: &[f64]| {
            let (a, b) = split(v);
            Ok::<_, Error>(stack(&a.iter().zip(&b).map(|(p, q)| p / q).collect::<Vec<_>>()))
        },
        &est,
        &u,
        &McConfig::new(DRAWS, 4),
    )
    .unwrap();
    assert!(max_rel_diag(y.cov(), &mc.std) < 0.03);
}

#[test]
fn deconv_variance_grows_as_response_shrinks() {
    let x = SpectrumU::from_complex(&[Complex64::new(1.0, 0.0)], vec![1.0], Cov::identity(2, 2) * 1e-4, None).unwrap();
    let mut last = 0.0;
    for mag in [1.0, 0.5, 0.1, 0.01] {
        let h = SpectrumU::exact(&[Complex64::new(mag, 0.0)], vec![1.0], None).unwrap();
        let y = dft_deconv(&x, &h, 1e-6).unwrap();
        let v = y.cov()[(0, 0)];
        assert!((v * mag * mag - 1e-4).abs() < 1e-16);
        assert!(v > last);
        last = v;
    }
}

#[test]
fn amplitude_phase_conversions_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let m = 12;
    let amp: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let phase: Vec<f64> = (0..m).map(|_| rng.random_range(-2.5..2.5)).collect();
    let mut cov = random_cov(&mut rng, 2 * m, 1e-6);
    for k in 0..m {
        // keep σ ≤ 1% of A
        cov[(k, k)] += 0.0;
        assert!(cov[(k, k)].sqrt() <= 0.01 * amp[k]);
    }
    let ap = AmpPhaseU::new(amp.clone(), phase.clone(), cov.clone(), (0..m).map(|k| k as f64).collect(), None).unwrap();
    let f = amp_phase_to_dft(&ap).unwrap();
    let est: Vec<f64> = amp.iter().chain(&phase).copied().collect();
    let mc = mc_propagate(
        |v: &[f64]| {
            let z: Vec<Complex64> = (0..m).map(|k| Complex64::from_polar(v[k], v[m + k])).collect();
            Ok::<_, Error>(stack(&z))
        },
        &est,
        &cov,
        &McConfig::new(DRAWS, 6),
    )
    .unwrap();
    assert!(max_rel_diag(f.cov(), &mc.std) < 0.03);

    let back = dft_to_amp_phase(&f, false).unwrap();
    let mc = mc_propagate(
        |v: &[f64]| {
            let z = reim_of(v);
            let a: Vec<f64> = z.iter().map(|c| c.norm()).chain(z.iter().map(|c| c.arg())).collect();
            Ok::<_, Error>(a)
        },
        f.reim(),
        f.cov(),
        &McConfig::new(DRAWS, 7),
    )
    .unwrap();
    assert!(max_rel_diag(back.cov(), &mc.std) < 0.03);
}

#[test]
fn fir_closed_form_matches_monte_carlo_and_smc() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let b: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
    let ub = random_cov(&mut rng, 12, 1e-5);
    let flt = DigitalFilterU::new(b.clone(), vec![], ub.clone(), 0).unwrap();
    let n = 120;
    let vals: Vec<f64> = (0..n).map(|i| (0.2 * i as f64).sin() + 0.3 * (0.05 * i as f64).cos()).collect();
    let sigma = 0.05;
    let x = TimeSeriesU::new(vals.clone(), 1e-3, 0.0, Uncertainty::White(sigma)).unwrap();
    let y = fir_unc_filter(&x, &flt).unwrap();

    // Joint draw of input samples and coefficients.
    let est: Vec<f64> = vals.iter().chain(&b).copied().collect();
    let u = block_diag(&(Cov::identity(n, n) * sigma * sigma), &ub);
    let mc = mc_propagate(
        |v: &[f64]| Ok::<_, Error>(DigitalFilterU::fir(v[n..].to_vec())?.apply(&v[..n])),
        &est,
        &u,
        &McConfig::new(DRAWS, 8),
    )
    .unwrap();
    let start = flt.transient_len();
    let cf = y.std_unc();
    for i in start..n {
        assert!((mc.std[i] - cf[i]).abs() / cf[i] < 0.03, "sample {i}");
    }

    let smc = smc_filter(&vals, 1e-3, &Uncertainty::White(sigma), &flt, &SmcConfig::new(10_000, 9)).unwrap();
    for (i, (a, b)) in smc.std_unc().iter().zip(&cf).enumerate().skip(start) {
        assert!((a - b).abs() / b < 0.03, "sample {i}: smc {a} closed form {b}");
    }
}

#[test]
fn iir_state_space_matches_smc_and_impulse_energy() {
    let p = SosParams::exact(1.0, 0.2, 50.0).unwrap();
    let fs = 1000.0;
    let flt = sos_digital_filter(&p, fs, None).unwrap();
    let n = 400;
    let vals: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 20.0 * i as f64 / fs).sin()).collect();
    let sigma = 0.1;
    let x = TimeSeriesU::new(vals.clone(), 1.0 / fs, 0.0, Uncertainty::White(sigma)).unwrap();
    let y = iir_ss_filter(&x, &flt).unwrap();
    let steady = sigma * sigma * dynunc::filter::impulse_energy(&flt, 20_000);
    let last = y.std_unc()[n - 1].powi(2);
    assert!((last - steady).abs() / steady < 1e-6);

    let smc = smc_filter(&vals, 1.0 / fs, &Uncertainty::White(sigma), &flt, &SmcConfig::new(10_000, 12)).unwrap();
    let start = flt.transient_len().min(n / 2);
    for (i, (a, b)) in smc.std_unc().iter().zip(y.std_unc()).enumerate().skip(start) {
        assert!((a - b).abs() / b < 0.03, "sample {i}: smc {a} state space {b}");
    }
}

#[test]
fn transfer_function_compensates_distorted_sinusoid() {
    // Reference and sensor record a sine with small harmonic distortion; the
    // sensor is a first-order low-pass. The transfer function then
    // compensates a new sensor record of the same harmonics.
    let (n, fs, fc) = (256usize, 1000.0, 60.0);
    let ts = 1.0 / fs;
    let sensor = |f: f64| Complex64::new(1.0, 0.0) / Complex64::new(1.0, f / fc);
    let harmonics = |amps: &[(f64, f64)], through_sensor: bool| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 * ts;
                amps.iter()
                    .enumerate()
                    .map(|(k, (a, ph))| {
                        let f = (k + 1) as f64 * 8.0 * fs / n as f64;
                        let h = if through_sensor { sensor(f) } else { Complex64::new(1.0, 0.0) };
                        a * h.norm() * (2.0 * PI * f * t + ph + h.arg()).sin()
                    })
                    .sum()
            })
            .collect()
    };
    let sigma = 2e-3;
    let noisy = |v: Vec<f64>, seed: u64| {
        let x = TimeSeriesU::exact(v, ts).unwrap();
        dynunc::signals::add_noise(&x, &Uncertainty::White(sigma), seed).unwrap()
    };
    let cal = [(1.0, 0.0), (0.05, 0.3), (0.02, -1.0)];
    let new = [(0.7, 1.1), (0.04, -0.5), (0.03, 2.0)];
    let reference = noisy(harmonics(&cal, false), 1);
    let sensed = noisy(harmonics(&cal, true), 2);
    let measured = noisy(harmonics(&new, true), 3);
    let truth = harmonics(&new, false);

    let h = dft::dft_transferfunction(&reference, &sensed, 1e-6).unwrap();
    let keep: Vec<bool> = dft::snr_mask(&gum_dft(&reference).unwrap(), 10.0)
        .iter()
        .zip(dft::snr_mask(&gum_dft(&sensed).unwrap(), 10.0))
        .map(|(a, b)| *a && b)
        .collect();
    assert_eq!(keep.iter().filter(|k| **k).count(), 3, "the three harmonic bins");
    let h = dft::mask_bins(&h, &keep).unwrap();
    let est = dft::gum_idft(&dft_multiply(&gum_dft(&measured).unwrap(), &h).unwrap(), n).unwrap();

    let u = est.std_unc();
    let inside = est
        .values()
        .iter()
        .zip(&truth)
        .zip(&u)
        .filter(|((e, t), u)| (*e - *t).abs() <= 1.96 * **u)
        .count();
    let coverage = inside as f64 / n as f64;
    assert!(coverage >= 0.9, "coverage {coverage}");
}
