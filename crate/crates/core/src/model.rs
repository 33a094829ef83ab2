//! Split-plot designs, observed samples, and the Gaussian generator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Domain};

/// `(Σ)_{ij} = ρ^{|i−j|}`.
pub fn ar1_covariance(d: usize, rho: f64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension("dimension must be at least 1".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("AR(1) coefficient {rho} not in (-1, 1)")));
    }
    let mut powers = vec![1.0; d];
    for k in 1..d {
        powers[k] = powers[k - 1] * rho;
    }
    Ok(DMatrix::from_fn(d, d, |i, j| powers[i.abs_diff(j)]))
}

/// Ground truth of a heteroscedastic split-plot model:
/// `X_{i,j} ~ N_d(μ_i, Σ_i)` independent, `j = 1..n_i`, `i = 1..a`.
#[derive(Debug, Clone)]
pub struct SplitPlotDesign {
    n: Vec<usize>,
    means: DMatrix<f64>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl SplitPlotDesign {
    pub fn new(n: Vec<usize>, means: DMatrix<f64>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let a = n.len();
        if a == 0 {
            return Err(Error::InvalidDimension("design needs at least one group".into()));
        }
        let d = means.ncols();
        if d == 0 || means.nrows() != a {
            return Err(Error::DimensionMismatch(format!(
                "means must be {a}x(d>=1), got {}x{}",
                means.nrows(),
                means.ncols()
            )));
        }
        if covariances.len() != a {
            return Err(Error::DimensionMismatch(format!(
                "expected {a} covariance matrices, got {}",
                covariances.len()
            )));
        }
        if let Some((i, &ni)) = n.iter().enumerate().find(|(_, &ni)| ni < 2) {
            return Err(Error::InsufficientSample(format!("group {} has {ni} < 2 observations", i + 1)));
        }
        if !linalg::all_finite(&means) {
            return Err(Error::InvalidInput("means have non-finite entries".into()));
        }
        let mut factors = Vec::with_capacity(a);
        for (i, sigma) in covariances.iter().enumerate() {
            if sigma.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("covariance {} is not {d}x{d}", i + 1)));
            }
            if linalg::max_asymmetry(sigma) > 1e-10 {
                return Err(Error::InvalidInput(format!("covariance {} is not symmetric", i + 1)));
            }
            let chol = Cholesky::<f64, Dyn>::new(sigma.clone())
                .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance {}", i + 1)))?;
            factors.push(chol.l());
        }
        Ok(Self { n, means, covariances, factors })
    }

    /// Convenience constructor with zero means.
    pub fn centered(n: Vec<usize>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = covariances.first().map(|c| c.nrows()).unwrap_or(0);
        let a = n.len();
        Self::new(n, DMatrix::zeros(a, d), covariances)
    }

    pub fn groups(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.n
    }

    pub fn total(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// `ρ_i = n_i / N`.
    pub fn ratios(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.n.iter().map(|&ni| ni as f64 / total).collect()
    }

    /// Returns a copy with different group means.
    pub fn with_means(&self, means: DMatrix<f64>) -> Result<Self> {
        Self::new(self.n.clone(), means, self.covariances.clone())
    }

    /// Draws one sample from substream `seed`.
    pub fn sample(&self, seed: u64) -> SplitPlotSample {
        self.sample_replication(seed, 0)
    }

    /// Draws replication `rep` of the stream rooted at `seed`.
    ///
    /// Observation `(i, j)` uses its own substream `(seed, rep, i, j)`.
    pub fn sample_replication(&self, seed: u64, rep: u64) -> SplitPlotSample {
        let d = self.dim();
        let groups = (0..self.groups())
            .map(|i| {
                let l = &self.factors[i];
                let mu = self.means.row(i);
                let mut x = DMatrix::zeros(self.n[i], d);
                let mut z = DVector::zeros(d);
                for j in 0..self.n[i] {
                    let mut r = rng::substream(seed, Domain::Observation, &[rep, i as u64, j as u64]);
                    for v in z.iter_mut() {
                        *v = r.sample(StandardNormal);
                    }
                    let y = l * &z;
                    for t in 0..d {
                        x[(j, t)] = mu[t] + y[t];
                    }
                }
                x
            })
            .collect();
        SplitPlotSample { groups }
    }

    /// Draws `reps` replications in parallel.
    pub fn sample_many(&self, seed: u64, reps: u64) -> Vec<SplitPlotSample> {
        (0..reps).into_par_iter().map(|r| self.sample_replication(seed, r)).collect()
    }
}

/// Observed data: `a` groups of `n_i × d` observation matrices (rows are subjects).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlotSample {
    groups: Vec<DMatrix<f64>>,
}

impl SplitPlotSample {
    pub fn new(groups: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = groups.first() else {
            return Err(Error::InvalidDimension("sample needs at least one group".into()));
        };
        let d = first.ncols();
        if d == 0 {
            return Err(Error::InvalidDimension("sample dimension must be at least 1".into()));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "group {} has {} columns, expected {d}",
                    i + 1,
                    g.ncols()
                )));
            }
            if g.nrows() == 0 {
                return Err(Error::InsufficientSample(format!("group {} is empty", i + 1)));
            }
            if !linalg::all_finite(g) {
                return Err(Error::InvalidInput(format!("group {} has non-finite entries", i + 1)));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[DMatrix<f64>] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> &DMatrix<f64> {
        &self.groups[i]
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.groups[0].ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.nrows()).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.nrows()).sum()
    }

    pub fn min_size(&self) -> usize {
        self.groups.iter().map(|g| g.nrows()).min().unwrap_or(0)
    }

    /// Group mean `X̄_i`.
    pub fn group_mean(&self, i: usize) -> DVector<f64> {
        let g = &self.groups[i];
        g.row_mean().transpose()
    }

    /// `(X̄₁ᵀ, …, X̄_aᵀ)ᵀ`.
    pub fn pooled_mean(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.group_count() * d);
        for i in 0..self.group_count() {
            out.rows_mut(i * d, d).copy_from(&self.group_mean(i));
        }
        out
    }

    /// Multiplies every observation by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { groups: self.groups.iter().map(|g| g * c).collect() }
    }

    /// Adds `shift[i]` to every observation of group `i`.
    pub fn shifted(&self, shift: &[DVector<f64>]) -> Self {
        let groups = self
            .groups
            .iter()
            .zip(shift)
            .map(|(g, m)| {
                let mut g = g.clone();
                for mut row in g.row_iter_mut() {
                    row += m.transpose();
                }
                g
            })
            .collect();
        Self { groups }
    }

    /// Reorders the observations of each group by `perms[i]`.
    pub fn permuted(&self, perms: &[Vec<usize>]) -> Self {
        let groups = self
            .groups
            .iter()
            .zip(perms)
            .map(|(g, p)| g.select_rows(p.iter()))
            .collect();
        Self { groups }
    }
}
