//! Monte Carlo propagation engine with seed-deterministic, draw-parallel
//! evaluation and streaming (Welford) statistics.
//!
//! Draw `i` always uses its own ChaCha20 stream `i` of the configured seed,
//! and results are reduced in draw order, so the outcome does not depend on
//! the number of worker threads.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::propagate::sampling_factor;
use crate::types::{symmetrize, Cov};

/// Default number of draws for pipeline validation runs.
pub const DEFAULT_DRAWS: usize = 2000;

/// Smallest number of draws accepted by the MC routines.
pub const MIN_DRAWS: usize = 100;

/// Largest output dimension for which a full covariance is accumulated.
pub const MAX_FULL_COV_DIM: usize = 512;

const CHUNK: usize = 256;

/// Random stream for draw `stream` of the run seeded with `seed`.
pub fn draw_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal variate.
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Multivariate normal sampler `mean + L·z`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(mean: &[f64], cov: &Cov) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let zero = cov.iter().all(|v| *v == 0.0);
        let factor = if zero { cov.clone() } else { sampling_factor(cov)? };
        Ok(GaussianSampler {
            mean: mean.to_vec(),
            factor,
            zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.zero {
            return self.mean.clone();
        }
        let n = self.mean.len();
        let z: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
        let mut x = self.mean.clone();
        for i in 0..n {
            let mut s = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                s += self.factor[(i, j)] * zj;
            }
            x[i] += s;
        }
        x
    }
}

/// Streaming mean and variance of vector samples (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "sample of length {} for statistics of dimension {}",
                sample.len(),
                self.mean.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, q), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = x - *m;
            *m += d / n;
            *q += d * (x - *m);
        }
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample variance (divisor `n - 1`); zero for fewer than two samples.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|q| q / d).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }
}

/// Streaming mean and full covariance of vector samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCov {
    count: u64,
    mean: Vec<f64>,
    comoment: DMatrix<f64>,
}

impl RunningCov {
    pub fn new(dim: usize) -> Self {
        RunningCov {
            count: 0,
            mean: vec![0.0; dim],
            comoment: DMatrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        let dim = self.mean.len();
        if sample.len() != dim {
            return Err(Error::Dimension(format!(
                "sample of length {} for covariance of dimension {dim}",
                sample.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        let before: Vec<f64> = sample.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&before) {
            *m += d / n;
        }
        let after: Vec<f64> = sample.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for j in 0..dim {
            let aj = after[j];
            for i in j..dim {
                self.comoment[(i, j)] += before[i] * aj;
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample covariance (divisor `n - 1`).
    pub fn covariance(&self) -> Cov {
        let dim = self.mean.len();
        if self.count < 2 {
            return DMatrix::zeros(dim, dim);
        }
        let d = (self.count - 1) as f64;
        let mut c = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in j..dim {
                let v = self.comoment[(i, j)] / d;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        symmetrize(&mut c);
        c
    }
}

/// Evaluates `eval(i)` for `i in 0..draws` in parallel chunks and passes the
/// results to `sink` strictly in draw order.
pub fn for_each_draw<T, F, S>(draws: usize, eval: F, mut sink: S) -> Result<()>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
    S: FnMut(usize, T) -> Result<()>,
{
    let mut start = 0;
    while start < draws {
        let end = (start + CHUNK).min(draws);
        let out: Vec<T> = (start..end).into_par_iter().map(&eval).collect();
        for (i, t) in (start..end).zip(out) {
            sink(i, t)?;
        }
        start = end;
    }
    Ok(())
}

/// What to do when the model fails on a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Skip the draw and count it.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
    pub full_cov: bool,
    pub on_failure: FailurePolicy,
}

impl McConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        McConfig {
            draws,
            seed,
            full_cov: false,
            on_failure: FailurePolicy::Abort,
        }
    }

    pub fn with_full_cov(mut self) -> Self {
        self.full_cov = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cov: Option<Cov>,
    /// Draws accepted into the statistics.
    pub used: usize,
    /// Draws skipped because the model failed.
    pub failures: usize,
}

enum Acc {
    Diag(RunningStats),
    Full(RunningCov),
}

impl Acc {
    fn update(&mut self, y: &[f64]) -> Result<()> {
        match self {
            Acc::Diag(s) => s.update(y),
            Acc::Full(s) => s.update(y),
        }
    }
}

/// Propagates the normal distribution `N(est, U)` through `model` by Monte
/// Carlo and returns mean, pointwise standard deviation and optionally the
/// full output covariance.
pub fn mc_propagate<F, E>(model: F, est: &[f64], u: &Cov, cfg: &McConfig) -> Result<McResult>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, E> + Sync,
    E: std::fmt::Display,
{
    if cfg.draws < MIN_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo needs at least {MIN_DRAWS} draws, got {}",
            cfg.draws
        )));
    }
    let sampler = GaussianSampler::new(est, u)?;
    let mut acc: Option<Acc> = None;
    let mut failures = 0usize;
    let mut used = 0usize;
    for_each_draw(
        cfg.draws,
        |i| {
            let mut rng = draw_rng(cfg.seed, i as u64);
            let x = sampler.sample(&mut rng);
            model(&x).map_err(|e| e.to_string())
        },
        |i, out| {
            let y = match out {
                Ok(y) => y,
                Err(message) => match cfg.on_failure {
                    FailurePolicy::Abort => return Err(Error::ModelFailure { draw: i, message }),
                    FailurePolicy::Skip => {
                        failures += 1;
                        return Ok(());
                    }
                },
            };
            if acc.is_none() {
                acc = Some(if cfg.full_cov {
                    if y.len() > MAX_FULL_COV_DIM {
                        return Err(Error::InvalidParameter(format!(
                            "full covariance limited to output dimension {MAX_FULL_COV_DIM}, got {}",
                            y.len()
                        )));
                    }
                    Acc::Full(RunningCov::new(y.len()))
                } else {
                    Acc::Diag(RunningStats::new(y.len()))
                });
            }
            used += 1;
            acc.as_mut().expect("initialized above").update(&y)
        },
    )?;
    let acc = acc.ok_or(Error::Rejection {
        rejected: failures,
        accepted: 0,
    })?;
    let (mean, std, cov) = match acc {
        Acc::Diag(s) => (s.mean().to_vec(), s.std(), None),
        Acc::Full(s) => {
            let c = s.covariance();
            let std = c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
            (s.mean().to_vec(), std, Some(c))
        }
    };
    Ok(McResult {
        mean,
        std,
        cov,
        used,
        failures,
    })
}
