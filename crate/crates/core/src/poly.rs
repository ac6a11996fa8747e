//! Polynomial helpers for filter coefficient vectors.
//!
//! Digital filter polynomials are stored in ascending powers of `z⁻¹`:
//! `p(z) = p₀ + p₁z⁻¹ + … + p_n z⁻ⁿ`, whose roots in `z` are the roots of
//! the ordinary polynomial `p₀zⁿ + p₁zⁿ⁻¹ + … + p_n`.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Evaluates `Σ p_k e^{-jωk}` at normalized angular frequency `w` (rad/sample).
pub fn eval_z(p: &[f64], w: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -w);
    let mut acc = Complex64::new(0.0, 0.0);
    for c in p.iter().rev() {
        acc = acc * step + *c;
    }
    acc
}

/// Evaluates `Σ k·p_k e^{-jωk}` (derivative helper for group delay).
pub fn eval_z_ramped(p: &[f64], w: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -w);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, c) in p.iter().enumerate().rev() {
        acc = acc * step + *c * k as f64;
    }
    acc
}

/// Roots in `z` of a coefficient vector in powers of `z⁻¹` (leading zeros of
/// the tail are dropped as roots at the origin are irrelevant to stability).
pub fn roots_z(p: &[f64]) -> Vec<Complex64> {
    let mut p = p.to_vec();
    while p.len() > 1 && *p.last().expect("nonempty") == 0.0 {
        p.pop();
    }
    while p.len() > 1 && p[0] == 0.0 {
        p.remove(0);
    }
    let deg = p.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = p[0];
    let monic: Vec<f64> = p.iter().map(|c| c / lead).collect();
    if deg == 1 {
        return vec![Complex64::new(-monic[1], 0.0)];
    }
    let companion = DMatrix::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -monic[j + 1]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut roots: Vec<Complex64> = companion.complex_eigenvalues().iter().copied().collect();
    for r in roots.iter_mut() {
        *r = polish(&monic, *r);
    }
    roots
}

fn horner(p: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut d = Complex64::new(0.0, 0.0);
    for c in p {
        d = d * z + v;
        v = v * z + *c;
    }
    (v, d)
}

/// A few Newton steps on the monic polynomial (descending powers of `z`).
fn polish(p: &[f64], mut z: Complex64) -> Complex64 {
    for _ in 0..3 {
        let (v, d) = horner(p, z);
        if d.norm() == 0.0 {
            break;
        }
        let step = v / d;
        let next = z - step;
        if !next.re.is_finite() || !next.im.is_finite() {
            break;
        }
        if horner(p, next).0.norm() > v.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Coefficients (powers of `z⁻¹`, leading 1) of `Π (1 - r_i z⁻¹)`.
/// Complex roots must come in conjugate pairs; imaginary residue is dropped.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += *v;
            next[i + 1] -= *v * r;
        }
        c = next;
    }
    c.into_iter().map(|v| v.re).collect()
}

/// Product of two polynomials.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
