use std::f64::consts::PI;

use dynunc::design::isstable;
use dynunc::mc::{draw_rng, std_normal, GaussianSampler};
use dynunc::sos::{
    bilinear_discretize, eval_s, fit_sos, sos_digital_filter, sos_freq_resp, sos_linear_response, sos_mc_response,
    sos_phys2filter, FitSosOptions, ResponseForm, SosParams, SosResponse,
};
use dynunc::Cov;
use nalgebra::DVector;
use num_complex::Complex64;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn fit_recovers_parameters_from_noiseless_response() {
    let p = SosParams::exact(0.4, 0.05, 8000.0).unwrap();
    let freqs = linspace(500.0, 14000.0, 20);
    let s = sos_freq_resp(&p, &freqs);
    let q = fit_sos(&freqs, &s, None, &FitSosOptions::default()).unwrap();
    assert!(rel(q.s0, 0.4) < 1e-6);
    assert!(rel(q.delta, 0.05) < 1e-6);
    assert!(rel(q.f0, 8000.0) < 1e-6);
}

#[test]
fn fit_is_homogeneous_in_gain() {
    let p = SosParams::exact(2.0, 0.3, 50.0).unwrap();
    let freqs = linspace(0.0, 90.0, 30);
    let s = sos_freq_resp(&p, &freqs);
    let base = fit_sos(&freqs, &s, None, &FitSosOptions::default()).unwrap();
    let g = -3.5;
    let scaled: Vec<Complex64> = s.iter().map(|v| v * g).collect();
    // A negative gain flips the sign of every coefficient; only positive
    // gains keep a physical fit.
    assert!(fit_sos(&freqs, &scaled, None, &FitSosOptions::default()).is_err());
    let g = 3.5;
    let scaled: Vec<Complex64> = s.iter().map(|v| v * g).collect();
    let q = fit_sos(&freqs, &scaled, None, &FitSosOptions::default()).unwrap();
    assert!(rel(q.s0, g * base.s0) < 1e-10);
    assert!(rel(q.delta, base.delta) < 1e-10);
    assert!(rel(q.f0, base.f0) < 1e-10);
}

/// Response with 0.5% complex multiplicative noise, and its covariance.
fn noisy_response(p: &SosParams, freqs: &[f64], seed: u64) -> (Vec<Complex64>, Cov) {
    let s = sos_freq_resp(p, freqs);
    let mut rng = draw_rng(seed, 0);
    let rel_sd = 0.005 / 2f64.sqrt();
    let noisy = s
        .iter()
        .map(|v| v * Complex64::new(1.0 + rel_sd * std_normal(&mut rng), rel_sd * std_normal(&mut rng)))
        .collect();
    // Var(Re) and Var(Im) of S·(1 + η) with η circular: (rel_sd·|S|)² each.
    let d: Vec<f64> = s.iter().map(|v| (rel_sd * v.norm()).powi(2)).collect();
    let mut diag = d.clone();
    diag.extend(d);
    (noisy, Cov::from_diagonal(&DVector::from_vec(diag)))
}

#[test]
fn fit_intervals_cover_truth() {
    let p = SosParams::exact(0.4, 0.05, 8000.0).unwrap();
    let freqs = linspace(500.0, 14000.0, 40);
    let opts = FitSosOptions {
        weighting: true,
        draws: 400,
        seed: 0,
    };
    let reps = 200;
    let mut covered = [0usize; 3];
    for rep in 0..reps {
        let (s, us) = noisy_response(&p, &freqs, 1000 + rep);
        let q = fit_sos(&freqs, &s, Some(&us), &FitSosOptions { seed: rep, ..opts }).unwrap();
        let u = q.std_unc();
        for (j, (est, truth)) in [(q.s0, p.s0), (q.delta, p.delta), (q.f0, p.f0)].iter().enumerate() {
            if (est - truth).abs() <= 1.96 * u[j] {
                covered[j] += 1;
            }
        }
    }
    for (j, c) in covered.iter().enumerate() {
        let frac = *c as f64 / reps as f64;
        assert!(frac >= 0.9, "parameter {j}: coverage {frac}");
    }
}

#[test]
fn fit_over_low_band_of_pressure_line() {
    // Catheter-like system calibrated between 0 and 25 Hz.
    let p = SosParams::exact(1.0, 0.2, 20.0).unwrap();
    let freqs = linspace(0.0, 25.0, 51);
    let (s, us) = noisy_response(&p, &freqs, 9);
    let q = fit_sos(&freqs, &s, Some(&us), &FitSosOptions { weighting: true, ..Default::default() }).unwrap();
    let fitted = sos_freq_resp(&q, &freqs);
    let worst = fitted.iter().zip(&s).map(|(a, b)| (a - b).norm() / b.norm()).fold(0.0, f64::max);
    assert!(worst < 0.02, "worst relative residual {worst}");
    assert!(rel(q.f0, 20.0) < 0.01);
    assert!(rel(q.delta, 0.2) < 0.05);
}

#[test]
fn continuous_form_reproduces_response() {
    let p = SosParams::exact(0.7, 0.12, 300.0).unwrap();
    let (num, den) = sos_phys2filter(&p);
    let freqs = linspace(0.0, 1000.0, 101);
    for (f, s) in freqs.iter().zip(sos_freq_resp(&p, &freqs)) {
        let v = eval_s(&num, &den, Complex64::new(0.0, 2.0 * PI * f));
        assert!((v - s).norm() <= 1e-12 * s.norm().max(1.0));
    }
}

#[test]
fn mc_response_without_uncertainty_is_exact() {
    let p = SosParams::exact(0.4, 0.05, 8000.0).unwrap();
    let freqs = linspace(0.0, 16000.0, 33);
    let SosResponse::ReIm(h) = sos_mc_response(&p, &freqs, 200, ResponseForm::ReIm, 1).unwrap() else {
        panic!("wrong form");
    };
    for (a, b) in h.values().iter().zip(sos_freq_resp(&p, &freqs)) {
        assert!((a - b).norm() <= 1e-12 * b.norm());
    }
    assert!(h.cov().unwrap().amax() < 1e-20);
}

#[test]
fn gain_uncertainty_scales_the_response() {
    let var_s0 = 1e-4;
    let cov = Cov::from_diagonal(&DVector::from_vec(vec![var_s0, 0.0, 0.0]));
    let p = SosParams::new(0.4, 0.05, 8000.0, cov).unwrap();
    let freqs = linspace(0.0, 16000.0, 17);
    let SosResponse::ReIm(h) = sos_mc_response(&p, &freqs, 100_000, ResponseForm::ReIm, 2).unwrap() else {
        panic!("wrong form");
    };
    let m = freqs.len();
    let cov = h.cov().unwrap();
    for (k, s) in sos_freq_resp(&p, &freqs).iter().enumerate() {
        let unit = s / p.s0;
        for (idx, part) in [(k, unit.re), (m + k, unit.im)] {
            let expect = part * part * var_s0;
            if expect > 1e-12 {
                assert!(rel(cov[(idx, idx)], expect) < 0.03, "bin {k}");
            }
        }
    }
}

#[test]
fn first_order_matches_monte_carlo() {
    let v = [0.4, 0.05, 8000.0];
    let sd: Vec<f64> = v.iter().map(|x| 1e-3 * x).collect();
    let mut cov = Cov::from_diagonal(&DVector::from_iterator(3, sd.iter().map(|s| s * s)));
    cov[(1, 2)] = 0.3 * sd[1] * sd[2];
    cov[(2, 1)] = cov[(1, 2)];
    let p = SosParams::new(v[0], v[1], v[2], cov).unwrap();
    let freqs = linspace(0.0, 16000.0, 41);
    let lin = sos_linear_response(&p, &freqs).unwrap();
    let SosResponse::ReIm(mc) = sos_mc_response(&p, &freqs, 100_000, ResponseForm::ReIm, 3).unwrap() else {
        panic!("wrong form");
    };
    let (a, b) = (lin.cov().unwrap(), mc.cov().unwrap());
    let m = freqs.len();
    // Second-order term ½·tr((HΣ)²) from a finite-difference Hessian. Where
    // the gradient vanishes (Im S at f0 is stationary in f0) it dominates.
    let cov = p.cov().clone();
    let h = [1e-3 * v[0], 1e-3 * v[1], 1e-3 * v[2]];
    let eval = |x: [f64; 3]| -> Vec<f64> {
        let r = sos_freq_resp(&SosParams::exact(x[0], x[1], x[2]).unwrap(), &freqs);
        r.iter().map(|c| c.re).chain(r.iter().map(|c| c.im)).collect()
    };
    let mut hess = vec![nalgebra::Matrix3::<f64>::zeros(); 2 * m];
    for i in 0..3 {
        for j in 0..3 {
            let shifted = |si: f64, sj: f64| {
                let mut x = v;
                x[i] += si * h[i];
                x[j] += sj * h[j];
                eval(x)
            };
            let (pp, pm, mp, mm) = (shifted(1.0, 1.0), shifted(1.0, -1.0), shifted(-1.0, 1.0), shifted(-1.0, -1.0));
            for c in 0..2 * m {
                hess[c][(i, j)] = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h[i] * h[j]);
            }
        }
    }
    let sigma = nalgebra::Matrix3::from_fn(|i, j| cov[(i, j)]);
    let scale = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let mut stationary = 0;
    for i in 0..2 * m {
        let hs = hess[i] * sigma;
        let second = a[(i, i)] + 0.5 * (hs * hs).trace();
        if second > 1e-6 * scale {
            assert!(rel(b[(i, i)], second) < 0.05, "component {i}: second order {second} mc {}", b[(i, i)]);
        }
        if a[(i, i)] > 1e-6 * scale {
            if second - a[(i, i)] < 0.01 * a[(i, i)] {
                assert!(rel(b[(i, i)], a[(i, i)]) < 0.05, "component {i}: lin {} mc {}", a[(i, i)], b[(i, i)]);
            } else {
                // Re S peaks at f0(1 ± δ) and Im S at f0: all inside the resonance band.
                assert!(rel(freqs[i % m], v[2]) <= 2.0 * v[1], "curvature away from resonance at component {i}");
                stationary += 1;
            }
        }
    }
    assert!(stationary <= 4, "{stationary} components dominated by curvature");
}

#[test]
fn amplitude_phase_form_is_continuous_through_resonance() {
    let cov = Cov::from_diagonal(&DVector::from_vec(vec![1e-6, 1e-6, 100.0]));
    let p = SosParams::new(0.4, 0.05, 8000.0, cov).unwrap();
    let freqs = linspace(7000.0, 9000.0, 21);
    let SosResponse::AmpPhase(ap) = sos_mc_response(&p, &freqs, 2000, ResponseForm::AmpPhase, 4).unwrap() else {
        panic!("wrong form");
    };
    let at_f0 = ap.phase()[10];
    assert!((at_f0 + PI / 2.0).abs() < 0.05);
    for w in ap.phase().windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn integrator_follows_warping_relation() {
    let fs = 1.0;
    let d = bilinear_discretize(&[1.0], &[1.0, 0.0], fs, None).unwrap();
    for f in linspace(0.001, 0.45, 200) {
        let w = 2.0 * PI * f / fs;
        let h = d.response(w);
        let warped = 2.0 * fs * (w / 2.0).tan();
        let exact = Complex64::new(0.0, warped).inv();
        assert!((h - exact).norm() <= 1e-10 * exact.norm());
        if f <= 0.05 * fs {
            let c = Complex64::new(0.0, 2.0 * PI * f).inv();
            assert!((h - c).norm() / c.norm() < 0.01, "f = {f}");
        }
    }
}

#[test]
fn prewarped_sos_matches_at_resonance() {
    let p = SosParams::exact(0.4, 0.05, 8000.0).unwrap();
    let fs = 100_000.0;
    let d = sos_digital_filter(&p, fs, Some(p.f0)).unwrap();
    let hd = d.freq_resp(&[p.f0], fs)[0];
    let hc = sos_freq_resp(&p, &[p.f0])[0];
    assert!(rel(hd.norm(), hc.norm()) < 1e-10);
}

#[test]
fn discretized_sos_tracks_continuous_magnitude_below_resonance() {
    let fs = 20.0;
    for delta in [0.05, 0.2, 0.707] {
        let p = SosParams::exact(1.0, delta, 1.0).unwrap();
        let d = sos_digital_filter(&p, fs, None).unwrap();
        let freqs = linspace(0.0, 0.5, 501);
        let worst = d
            .freq_resp(&freqs, fs)
            .iter()
            .zip(sos_freq_resp(&p, &freqs))
            .map(|(a, b)| rel(a.norm(), b.norm()))
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "delta {delta}: {worst}");
        // Whole band through the warping map.
        let k = 2.0 * fs;
        for f in linspace(0.0, 9.0, 91) {
            let w = 2.0 * PI * f / fs;
            let exact = sos_freq_resp(&p, &[k * (w / 2.0).tan() / (2.0 * PI)])[0];
            assert!((d.response(w) - exact).norm() <= 1e-9 * exact.norm().max(1e-3));
        }
    }
}

#[test]
fn bilinear_keeps_random_stable_systems_stable() {
    let cov = Cov::from_diagonal(&DVector::from_vec(vec![0.01, 0.02f64.powi(2), 500.0f64.powi(2)]));
    let sampler = GaussianSampler::new(&[1.0, 0.05, 8000.0], &cov).unwrap();
    let mut checked = 0;
    for i in 0..500 {
        let v = sampler.sample(&mut draw_rng(6, i));
        if v[1] <= 0.0 || v[2] <= 0.0 {
            continue;
        }
        let p = SosParams::exact(v[0], v[1], v[2]).unwrap();
        for fs in [20_000.0, 100_000.0] {
            assert!(isstable(&sos_digital_filter(&p, fs, None).unwrap()));
        }
        checked += 1;
    }
    assert!(checked > 400);
}

#[test]
fn impulse_response_rings_at_damped_frequency() {
    let p = SosParams::exact(1.0, 0.05, 1000.0).unwrap();
    let fs = 64_000.0;
    let d = sos_digital_filter(&p, fs, Some(p.f0)).unwrap();
    let n = 1 << 16;
    let h = d.impulse_response(n);
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = h.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft.process(&mut buf);
    let (k, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    let peak = (k + 1) as f64 * fs / n as f64;
    let damped = p.f0 * (1.0 - p.delta * p.delta).sqrt();
    // Peak of |S| sits at f0·√(1−2δ²); both are within a bin of each other here.
    assert!((peak - damped).abs() <= 2.0 * fs / n as f64, "peak {peak} vs {damped}");
}
