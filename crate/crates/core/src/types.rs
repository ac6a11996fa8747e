//! Shared domain types: time series, spectra and linear models that carry
//! their covariance along with the values.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense covariance matrix.
pub type Cov = DMatrix<f64>;

/// Relative asymmetry accepted (and averaged away) by constructors.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest `|U_ij - U_ji|` relative to the largest entry of `U`.
pub fn asymmetry(u: &Cov) -> f64 {
    let scale = u.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let n = u.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((u[(i, j)] - u[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Replaces `u` by `(u + uᵀ)/2`.
pub fn symmetrize(u: &mut Cov) {
    let n = u.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (u[(i, j)] + u[(j, i)]);
            u[(i, j)] = m;
            u[(j, i)] = m;
        }
    }
}

pub(crate) fn check_cov(u: &Cov, dim: usize, what: &str, tol: f64) -> Result<Cov> {
    if u.nrows() != dim || u.ncols() != dim {
        return Err(Error::Dimension(format!(
            "{what}: expected {dim}x{dim} covariance, got {}x{}",
            u.nrows(),
            u.ncols()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what}: non-finite covariance entry")));
    }
    let asym = asymmetry(u);
    if asym > tol {
        return Err(Error::Asymmetric(asym));
    }
    let mut u = u.clone();
    symmetrize(&mut u);
    Ok(u)
}

/// Uncertainty attached to the samples of a [`TimeSeriesU`].
#[derive(Debug, Clone, PartialEq)]
pub enum Uncertainty {
    /// Same standard uncertainty for every sample, no correlation.
    White(f64),
    /// Standard uncertainty per sample, no correlation.
    Pointwise(Vec<f64>),
    /// Full covariance of the sample values.
    Full(Cov),
}

impl Uncertainty {
    pub fn exact() -> Self {
        Uncertainty::White(0.0)
    }

    /// True when the samples are uncorrelated (scalar or pointwise form).
    pub fn is_diagonal(&self) -> bool {
        !matches!(self, Uncertainty::Full(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Uncertainty::White(s) => *s == 0.0,
            Uncertainty::Pointwise(v) => v.iter().all(|s| *s == 0.0),
            Uncertainty::Full(u) => u.iter().all(|s| *s == 0.0),
        }
    }

    /// Variance of sample `i`.
    pub fn variance(&self, i: usize) -> f64 {
        match self {
            Uncertainty::White(s) => s * s,
            Uncertainty::Pointwise(v) => v[i] * v[i],
            Uncertainty::Full(u) => u[(i, i)],
        }
    }

    /// Covariance between samples `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        match self {
            Uncertainty::Full(u) => u[(i, j)],
            _ if i == j => self.variance(i),
            _ => 0.0,
        }
    }
}

/// Uniformly sampled signal with the uncertainty of its values.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesU {
    values: Vec<f64>,
    ts: f64,
    t0: f64,
    unc: Uncertainty,
}

impl TimeSeriesU {
    pub fn new(values: Vec<f64>, ts: f64, t0: f64, unc: Uncertainty) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling interval must be > 0, got {ts}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidParameter("start time must be finite".into()));
        }
        let n = values.len();
        let unc = match unc {
            Uncertainty::White(s) => {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(format!("standard uncertainty {s} < 0")));
                }
                Uncertainty::White(s)
            }
            Uncertainty::Pointwise(v) => {
                if v.len() != n {
                    return Err(Error::Dimension(format!(
                        "pointwise uncertainty has {} entries for {n} samples",
                        v.len()
                    )));
                }
                if v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(Error::InvalidParameter("negative or non-finite standard uncertainty".into()));
                }
                Uncertainty::Pointwise(v)
            }
            Uncertainty::Full(u) => Uncertainty::Full(check_cov(&u, n, "time series", SYMMETRY_TOL)?),
        };
        Ok(TimeSeriesU { values, ts, t0, unc })
    }

    /// Series without uncertainty starting at t = 0.
    pub fn exact(values: Vec<f64>, ts: f64) -> Result<Self> {
        Self::new(values, ts, 0.0, Uncertainty::exact())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn fs(&self) -> f64 {
        1.0 / self.ts
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn unc(&self) -> &Uncertainty {
        &self.unc
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t0 + i as f64 * self.ts).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.unc.variance(i)).collect()
    }

    /// Pointwise standard uncertainties.
    pub fn std_unc(&self) -> Vec<f64> {
        self.variances().into_iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Full covariance, expanded from the scalar or pointwise form if needed.
    pub fn covariance(&self) -> Cov {
        match &self.unc {
            Uncertainty::Full(u) => u.clone(),
            _ => Cov::from_diagonal(&nalgebra::DVector::from_vec(self.variances())),
        }
    }

    pub fn with_unc(self, unc: Uncertainty) -> Result<Self> {
        Self::new(self.values, self.ts, self.t0, unc)
    }

    pub fn with_values(self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.ts, self.t0, self.unc)
    }

    pub fn into_parts(self) -> (Vec<f64>, f64, f64, Uncertainty) {
        (self.values, self.ts, self.t0, self.unc)
    }
}

/// Sampling grid of the time signal a half-spectrum was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DftGrid {
    /// Number of time samples.
    pub n: usize,
    /// Sampling interval in seconds.
    pub ts: f64,
}

impl DftGrid {
    /// Number of half-spectrum bins, `n/2 + 1`.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Index of the Nyquist bin, present only for even `n`.
    pub fn nyquist(&self) -> Option<usize> {
        (self.n % 2 == 0).then_some(self.n / 2)
    }

    pub fn freqs(&self) -> Vec<f64> {
        let df = 1.0 / (self.n as f64 * self.ts);
        (0..self.bins()).map(|k| k as f64 * df).collect()
    }

    /// Bins whose imaginary part is identically zero for a real signal.
    pub fn real_bins(&self) -> Vec<usize> {
        let mut v = vec![0];
        if let Some(k) = self.nyquist() {
            if k != 0 {
                v.push(k);
            }
        }
        v
    }
}

/// Complex values stored as stacked real parts followed by imaginary parts,
/// with the joint covariance of that stacked vector.
///
/// When `grid` is present the spectrum is the half-spectrum of a real signal
/// and the imaginary parts at DC and Nyquist are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumU {
    reim: Vec<f64>,
    freqs: Vec<f64>,
    cov: Cov,
    grid: Option<DftGrid>,
}

impl SpectrumU {
    pub fn new(reim: Vec<f64>, freqs: Vec<f64>, cov: Cov, grid: Option<DftGrid>) -> Result<Self> {
        let m = freqs.len();
        if reim.len() != 2 * m {
            return Err(Error::Dimension(format!(
                "spectrum has {} stacked values for {m} frequencies",
                reim.len()
            )));
        }
        if reim.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spectrum value".into()));
        }
        let mut cov = check_cov(&cov, 2 * m, "spectrum", 1e-9)?;
        let mut reim = reim;
        if let Some(g) = grid {
            if g.bins() != m || !(g.ts > 0.0) {
                return Err(Error::Dimension(format!(
                    "grid of {} samples implies {} bins, spectrum has {m}",
                    g.n,
                    g.bins()
                )));
            }
            let scale = reim.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for k in g.real_bins() {
                if reim[m + k].abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidParameter(format!(
                        "imaginary part at real-valued bin {k} is {} (must be 0)",
                        reim[m + k]
                    )));
                }
                reim[m + k] = 0.0;
                cov.row_mut(m + k).fill(0.0);
                cov.column_mut(m + k).fill(0.0);
            }
        }
        Ok(SpectrumU { reim, freqs, cov, grid })
    }

    /// Builds a spectrum from complex values with the given stacked covariance.
    pub fn from_complex(values: &[Complex64], freqs: Vec<f64>, cov: Cov, grid: Option<DftGrid>) -> Result<Self> {
        let mut reim: Vec<f64> = values.iter().map(|c| c.re).collect();
        reim.extend(values.iter().map(|c| c.im));
        Self::new(reim, freqs, cov, grid)
    }

    /// Exact (zero covariance) spectrum.
    pub fn exact(values: &[Complex64], freqs: Vec<f64>, grid: Option<DftGrid>) -> Result<Self> {
        let m = values.len();
        Self::from_complex(values, freqs, Cov::zeros(2 * m, 2 * m), grid)
    }

    /// Number of frequency bins.
    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn reim(&self) -> &[f64] {
        &self.reim
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn cov(&self) -> &Cov {
        &self.cov
    }

    pub fn grid(&self) -> Option<DftGrid> {
        self.grid
    }

    pub fn re(&self) -> &[f64] {
        &self.reim[..self.bins()]
    }

    pub fn im(&self) -> &[f64] {
        &self.reim[self.bins()..]
    }

    pub fn value(&self, k: usize) -> Complex64 {
        Complex64::new(self.reim[k], self.reim[self.bins() + k])
    }

    pub fn values(&self) -> Vec<Complex64> {
        (0..self.bins()).map(|k| self.value(k)).collect()
    }

    /// Standard uncertainties of the stacked (Re, Im) vector.
    pub fn std_unc(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Sub-spectrum restricted to the given bins. The DFT grid is dropped
    /// because the result is no longer a full half-spectrum.
    pub fn select(&self, bins: &[usize]) -> Result<SpectrumU> {
        let m = self.bins();
        if let Some(&k) = bins.iter().find(|&&k| k >= m) {
            return Err(Error::Dimension(format!("bin {k} out of range for {m} bins")));
        }
        let idx: Vec<usize> = bins.iter().copied().chain(bins.iter().map(|k| k + m)).collect();
        let reim = idx.iter().map(|&i| self.reim[i]).collect();
        let freqs = bins.iter().map(|&k| self.freqs[k]).collect();
        let cov = Cov::from_fn(idx.len(), idx.len(), |i, j| self.cov[(idx[i], idx[j])]);
        SpectrumU::new(reim, freqs, cov, None)
    }
}

/// Amplitude and phase per frequency with the covariance of the stacked
/// (amplitude, phase) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpPhaseU {
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    cov: Cov,
    freqs: Vec<f64>,
    grid: Option<DftGrid>,
}

impl AmpPhaseU {
    pub fn new(amplitude: Vec<f64>, phase: Vec<f64>, cov: Cov, freqs: Vec<f64>, grid: Option<DftGrid>) -> Result<Self> {
        let m = freqs.len();
        if amplitude.len() != m || phase.len() != m {
            return Err(Error::Dimension(format!(
                "{} amplitudes and {} phases for {m} frequencies",
                amplitude.len(),
                phase.len()
            )));
        }
        if let Some(g) = grid {
            if g.bins() != m {
                return Err(Error::Dimension("grid does not match number of bins".into()));
            }
        }
        if let Some(k) = amplitude.iter().position(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative amplitude at bin {k}")));
        }
        let cov = check_cov(&cov, 2 * m, "amplitude/phase", 1e-9)?;
        Ok(AmpPhaseU { amplitude, phase, cov, freqs, grid })
    }

    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn cov(&self) -> &Cov {
        &self.cov
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn grid(&self) -> Option<DftGrid> {
        self.grid
    }
}

/// Multivariate linear measurement model `Y = C·X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    sens: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(sens: DMatrix<f64>) -> Result<Self> {
        if sens.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sensitivity coefficient".into()));
        }
        Ok(LinearModel { sens })
    }

    pub fn sens(&self) -> &DMatrix<f64> {
        &self.sens
    }

    pub fn inputs(&self) -> usize {
        self.sens.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.sens.nrows()
    }
}

/// Discrete linear state-space model
/// `z[n] = C·z[n-1] + D·x[n-1]`, `y[n] = E·z[n] + F·x[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>, e: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        let n = c.nrows();
        let p = d.ncols();
        let q = e.nrows();
        let ok = c.ncols() == n
            && d.nrows() == n
            && e.ncols() == n
            && f.nrows() == q
            && f.ncols() == p;
        if !ok {
            return Err(Error::Dimension(format!(
                "state-space matrices inconsistent: C {}x{}, D {}x{}, E {}x{}, F {}x{}",
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols(),
                e.nrows(),
                e.ncols(),
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(StateSpace { c, d, e, f })
    }

    pub fn states(&self) -> usize {
        self.c.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_series_rejects_bad_sampling() {
        assert!(TimeSeriesU::exact(vec![1.0], 0.0).is_err());
        assert!(TimeSeriesU::exact(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn pointwise_length_checked() {
        let r = TimeSeriesU::new(vec![1.0, 2.0], 1.0, 0.0, Uncertainty::Pointwise(vec![0.1]));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let mut u = Cov::identity(2, 2);
        u[(0, 1)] = 0.5;
        let r = TimeSeriesU::new(vec![1.0, 2.0], 1.0, 0.0, Uncertainty::Full(u));
        assert!(matches!(r, Err(Error::Asymmetric(_))));
    }

    #[test]
    fn tiny_asymmetry_is_averaged() {
        let mut u = Cov::identity(2, 2);
        u[(0, 1)] = 0.5;
        u[(1, 0)] = 0.5 + 1e-15;
        let ts = TimeSeriesU::new(vec![1.0, 2.0], 1.0, 0.0, Uncertainty::Full(u)).unwrap();
        let c = ts.covariance();
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn covariance_expands_scalar_form() {
        let ts = TimeSeriesU::new(vec![0.0; 3], 1.0, 0.0, Uncertainty::White(2.0)).unwrap();
        assert_eq!(ts.covariance(), Cov::identity(3, 3) * 4.0);
        assert_eq!(ts.std_unc(), vec![2.0; 3]);
    }

    #[test]
    fn spectrum_forces_real_bins() {
        let grid = DftGrid { n: 4, ts: 1.0 };
        let reim = vec![1.0, 2.0, 3.0, 1e-18, 0.5, -1e-18];
        let s = SpectrumU::new(reim, grid.freqs(), Cov::identity(6, 6), Some(grid)).unwrap();
        assert_eq!(s.im()[0], 0.0);
        assert_eq!(s.im()[2], 0.0);
        assert_eq!(s.cov()[(3, 3)], 0.0);
        assert_eq!(s.cov()[(5, 5)], 0.0);
        assert_eq!(s.cov()[(4, 4)], 1.0);
    }

    #[test]
    fn spectrum_rejects_imaginary_dc() {
        let grid = DftGrid { n: 4, ts: 1.0 };
        let reim = vec![1.0, 2.0, 3.0, 0.5, 0.5, 0.0];
        assert!(SpectrumU::new(reim, grid.freqs(), Cov::zeros(6, 6), Some(grid)).is_err());
    }

    #[test]
    fn odd_grid_has_no_nyquist() {
        let g = DftGrid { n: 7, ts: 0.5 };
        assert_eq!(g.bins(), 4);
        assert_eq!(g.nyquist(), None);
        assert_eq!(g.real_bins(), vec![0]);
    }

    #[test]
    fn select_keeps_cross_covariance() {
        let m = 3;
        let cov = Cov::from_fn(2 * m, 2 * m, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
        let s = SpectrumU::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.0, 1.0, 2.0], cov, None).unwrap();
        let sub = s.select(&[2]).unwrap();
        assert_eq!(sub.reim(), &[3.0, 6.0]);
        assert_eq!(sub.cov()[(0, 0)], 3.0);
        assert_eq!(sub.cov()[(1, 1)], 6.0);
        assert_eq!(sub.cov()[(0, 1)], 0.1);
    }

    #[test]
    fn state_space_dims_checked() {
        let ok = StateSpace::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        );
        assert!(ok.is_ok());
        let bad = StateSpace::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn amp_phase_rejects_negative_amplitude() {
        let r = AmpPhaseU::new(vec![-1.0], vec![0.0], Cov::zeros(2, 2), vec![1.0], None);
        assert!(r.is_err());
    }
}
