//! Linear covariance propagation and the factorizations used for sampling.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::types::{asymmetry, symmetrize, Cov, LinearModel};

/// Relative asymmetry accepted for covariance inputs of [`linear_propagate`].
pub const INPUT_SYMMETRY_TOL: f64 = 1e-10;

/// Default relative jitter for [`chol_psd`].
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Propagates `(x, Ux)` through `Y = C·X`: returns `C·x` and `C·Ux·Cᵀ`.
pub fn linear_propagate(model: &LinearModel, x: &[f64], ux: &Cov) -> Result<(Vec<f64>, Cov)> {
    let c = model.sens();
    if x.len() != c.ncols() || ux.nrows() != c.ncols() || ux.ncols() != c.ncols() {
        return Err(Error::Dimension(format!(
            "model takes {} inputs, got estimate of {} and covariance {}x{}",
            c.ncols(),
            x.len(),
            ux.nrows(),
            ux.ncols()
        )));
    }
    let asym = asymmetry(ux);
    if asym > INPUT_SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let y = c * nalgebra::DVector::from_column_slice(x);
    let mut uy = c * ux * c.transpose();
    symmetrize(&mut uy);
    Ok((y.as_slice().to_vec(), uy))
}

/// Running mean of a sampled signal by the trapezoidal rule.
///
/// Row 0 is zero; row `j` is the trapezoid integral over the first `j + 1`
/// samples divided by the elapsed time `j·dt`.
pub fn cumulative_mean_model(n: usize, dt: f64) -> Result<LinearModel> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("cumulative mean needs N >= 2, got {n}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let mut c = DMatrix::zeros(n, n);
    for j in 1..n {
        let elapsed = j as f64 * dt;
        for i in 0..=j {
            let w = if i == 0 || i == j { 0.5 } else { 1.0 };
            c[(j, i)] = w * dt / elapsed;
        }
    }
    LinearModel::new(c)
}

/// Lower-triangular `L` with `L·Lᵀ ≈ U` for a positive semi-definite `U`.
///
/// Pivots within `jitter·trace(U)/N` of zero are treated as exact zeros, so
/// rank-deficient covariances factor without perturbing their null space.
/// The reconstruction error is bounded by that jitter budget.
pub fn chol_psd(u: &Cov, jitter: f64) -> Result<Cov> {
    let n = u.nrows();
    if u.ncols() != n {
        return Err(Error::Dimension(format!("covariance is {}x{}", n, u.ncols())));
    }
    let asym = asymmetry(u);
    if asym > INPUT_SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let mut a = u.clone();
    symmetrize(&mut a);
    if n == 0 {
        return Ok(a);
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.l());
    }
    let trace = a.trace();
    let tol = jitter.max(0.0) * trace.abs() / n as f64;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::Indefinite {
                index: j,
                pivot: d,
                tolerance: tol,
            });
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Clips slightly negative eigenvalues of a symmetric matrix to zero.
///
/// Fails when an eigenvalue is below `-rel_tol·trace(U)`.
pub fn clip_psd(u: &Cov, rel_tol: f64) -> Result<Cov> {
    let n = u.nrows();
    let mut a = u.clone();
    symmetrize(&mut a);
    let trace = a.trace().abs();
    let eig = SymmetricEigen::new(a);
    let tol = rel_tol * trace;
    let mut vals = eig.eigenvalues.clone();
    for (i, v) in vals.iter_mut().enumerate() {
        if *v < -tol {
            return Err(Error::Indefinite {
                index: i,
                pivot: *v,
                tolerance: tol,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    symmetrize(&mut out);
    debug_assert_eq!(out.nrows(), n);
    Ok(out)
}

/// Sampling factor for a covariance produced by propagation: tries
/// [`chol_psd`] and falls back to eigen-clipping at `-1e-8·trace`.
///
/// Rank-deficient covariances built through several products (a design
/// covariance cascaded with a low-pass, say) carry rounding negatives of
/// order `1e-10·trace`; clipping them changes the covariance by less than
/// the tolerance.
///
/// The fallback triangularises `V·sqrt(Λ₊)` by QR instead of factoring the
/// clipped matrix again; rebuilding `V·Λ₊·Vᵀ` leaves rounding negatives
/// that a second Cholesky pass can trip over.
pub fn sampling_factor(u: &Cov) -> Result<Cov> {
    match chol_psd(u, DEFAULT_JITTER) {
        Ok(l) => Ok(l),
        Err(Error::Indefinite { .. }) => {
            let mut a = u.clone();
            symmetrize(&mut a);
            let tol = 1e-8 * a.trace().abs();
            let n = a.nrows();
            let eig = SymmetricEigen::new(a);
            // Eigenvalues below the numerical-rank cut-off are rounding, and
            // keeping them would add white noise to every draw.
            let floor = n as f64 * f64::EPSILON * eig.eigenvalues.max();
            let mut f = eig.eigenvectors;
            for (i, v) in eig.eigenvalues.iter().enumerate() {
                if *v < -tol {
                    return Err(Error::Indefinite {
                        index: i,
                        pivot: *v,
                        tolerance: tol,
                    });
                }
                let s = if *v > floor { v.sqrt() } else { 0.0 };
                f.column_mut(i).scale_mut(s);
            }
            Ok(f.transpose().qr().r().transpose())
        }
        Err(e) => Err(e),
    }
}
