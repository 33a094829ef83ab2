//! Symmetrized U-statistic estimators of the traces that drive the test.
//!
//! All estimators are built from within-group differences
//! `Y_{i,ℓ,k} = X_{i,ℓ} − X_{i,k}`, so unknown group means never enter.
//!
//! | estimator | target |
//! |-----------|--------|
//! | `A_{i,1}` | `tr(T_S Σ_i)` |
//! | `A_{i,r,2}` | `tr(T_S Σ_i T_S Σ_r)`, `i ≠ r` |
//! | `A_{i,3}` | `tr((T_S Σ_i)²)` |
//! | `A_4` | `tr((T V_N)²)` |
//! | `C_5`, `C_5*`, `C_7`, `C_7*` | `tr((T V_N)³)` |
//! | `C_6`, `C_6*` | `tr((T V_N)⁴)` |

mod cyclic;
mod gram;
mod pairwise;
mod quartic;
mod subsample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::ProjectionPair;
use crate::model::SplitPlotSample;

pub use cyclic::{c5_exact, c5_star, c7, c7_star, c7_with_permutations, draw_permutations};
pub use gram::GramCache;
pub use pairwise::{
    a1, a1_definitional, a2, a2_definitional, a3, a3_definitional, a4, a4_from_parts, e_hat_q,
};
pub use quartic::{c6_exact, c6_star};
pub use subsample::{a_star_suite, empirical_overlap_fraction, overlap_fraction_formula, StarParts};

/// Default cap on kernel evaluations for the exact `C_5`, `C_6` and `C_7` sums.
pub const DEFAULT_WORK_CAP: f64 = 1e7;

/// How the estimates were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// Definitional U-statistic sums.
    Exact,
    /// Closed forms (Gram/Hadamard) for the `A`s; the default.
    Efficient,
    /// Subsampled `A*` estimators.
    Subsampled,
}

impl EstimatorMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "efficient" => Ok(Self::Efficient),
            "subsampled" => Ok(Self::Subsampled),
            _ => Err(Error::Parse(format!("unknown estimator mode '{s}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Efficient => "efficient",
            Self::Subsampled => "subsampled",
        }
    }
}

/// Which estimator of `tr((TV_N)³)` feeds the degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfEstimator {
    C5Exact,
    C5Star,
    C7Star,
}

impl DfEstimator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "c5" | "c5_exact" => Ok(Self::C5Exact),
            "c5_star" | "c5star" => Ok(Self::C5Star),
            "c7_star" | "c7star" => Ok(Self::C7Star),
            _ => Err(Error::Parse(format!("unknown degrees-of-freedom estimator '{s}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::C5Exact => "c5_exact",
            Self::C5Star => "c5_star",
            Self::C7Star => "c7_star",
        }
    }
}

/// Provenance of a [`TraceEstimates`] record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub mode: EstimatorMode,
    pub df: Option<DfEstimator>,
    /// Number of subsample draws (0 when nothing was subsampled).
    pub b: u64,
    /// Number of permutations for `C_7`-type estimators.
    pub w: u64,
    pub seed: u64,
}

/// Everything the test needs from the data, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimates {
    /// `A_{i,1}`.
    pub a1: Vec<f64>,
    /// `A_{i,r,2}` off the diagonal, `A_{i,3}` on it.
    pub a2: Vec<Vec<f64>>,
    /// `A_{i,3}`.
    pub a3: Vec<f64>,
    pub a4: f64,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub c7: Option<f64>,
    pub tau_p_hat: Option<f64>,
    pub f_p_hat: Option<f64>,
    pub meta: EstimatorMeta,
}

impl TraceEstimates {
    /// `Ê_{H0}(Q_N) = Σ_i (N/n_i)(T_W)_{ii} A_{i,1}`.
    pub fn e_hat(&self, sample: &SplitPlotSample, pair: &ProjectionPair) -> f64 {
        let total = sample.total() as f64;
        sample
            .sizes()
            .iter()
            .enumerate()
            .map(|(i, &ni)| total / ni as f64 * pair.t_whole()[(i, i)] * self.a1[i])
            .sum()
    }

    /// The cubic-trace estimate used for the degrees of freedom, preferring `C_5`.
    pub fn cubic(&self) -> Option<f64> {
        self.c5.or(self.c7)
    }
}

/// `τ̂_P = clamp(C²/A_4³, 0, 1)` and `f̂_P = 1/max(τ̂_P, 1/(a·d))`.
pub fn tau_f_hat(cubic: f64, a4: f64, a: usize, d: usize) -> Result<(f64, f64)> {
    if !(a4 > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "variance estimate A_4 = {a4} is not positive"
        )));
    }
    let raw = cubic * cubic / (a4 * a4 * a4);
    let tau = if raw.is_finite() { raw.clamp(0.0, 1.0) } else { 1.0 };
    let floor = 1.0 / (a * d) as f64;
    Ok((tau, 1.0 / tau.max(floor)))
}

/// Settings for [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    /// `None` skips the degrees-of-freedom estimate.
    pub df: Option<DfEstimator>,
    /// Subsample draws; `None` means `500·N`.
    pub b: Option<u64>,
    pub w: u64,
    pub seed: u64,
    pub work_cap: f64,
    /// Also compute `C_6*` (for `τ̂_CQ`).
    pub with_c6: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Efficient,
            df: Some(DfEstimator::C5Star),
            b: None,
            w: 1,
            seed: 0,
            work_cap: DEFAULT_WORK_CAP,
            with_c6: false,
        }
    }
}

/// Subsample count used for simulation studies.
pub fn default_simulation_b(total: usize) -> u64 {
    500 * total as u64
}

/// Subsample count used for a single data analysis.
pub fn default_analysis_b(total: usize) -> u64 {
    50_000 * total as u64
}

/// Computes the `A` family and, if requested and possible, the cubic estimate and `f̂_P`.
pub fn estimate(
    sample: &SplitPlotSample,
    pair: &ProjectionPair,
    config: &EstimatorConfig,
) -> Result<TraceEstimates> {
    check_dims(sample, pair)?;
    let a = sample.group_count();
    let d = sample.dim();
    let b = config.b.unwrap_or_else(|| default_simulation_b(sample.total()));
    let cache = GramCache::new(sample, pair.t_sub());

    let (a1v, a2m, a3v, a4v) = match config.mode {
        EstimatorMode::Efficient => {
            let parts = pairwise::efficient_parts(&cache)?;
            let a4v = a4_from_parts(sample, pair, &parts.2, &parts.1)?;
            (parts.0, parts.1, parts.2, a4v)
        }
        EstimatorMode::Exact => {
            let parts = pairwise::definitional_parts(sample, pair.t_sub())?;
            let a4v = a4_from_parts(sample, pair, &parts.2, &parts.1)?;
            (parts.0, parts.1, parts.2, a4v)
        }
        EstimatorMode::Subsampled => {
            let star = a_star_suite(sample, pair, b, config.seed)?;
            (star.a1, star.a2, star.a3, star.a4)
        }
    };

    let mut c5v = None;
    let mut c7v = None;
    if let Some(df) = config.df {
        match df {
            DfEstimator::C5Exact => c5v = Some(cyclic::c5_exact_cached(&cache, sample, pair, config.work_cap)?),
            DfEstimator::C5Star => c5v = Some(cyclic::c5_star_cached(&cache, sample, pair, b, config.seed)?),
            DfEstimator::C7Star => {
                c7v = Some(cyclic::c7_star_cached(&cache, sample, pair, config.w, b, config.seed)?)
            }
        }
    }
    let c6v = if config.with_c6 {
        Some(quartic::c6_star_cached(&cache, sample, pair, b, config.seed)?)
    } else {
        None
    };

    let cubic = c5v.or(c7v);
    let (tau, f) = match cubic {
        Some(c) => {
            let (t, f) = tau_f_hat(c, a4v, a, d)?;
            (Some(t), Some(f))
        }
        None => (None, None),
    };

    let subsampled = config.mode == EstimatorMode::Subsampled
        || matches!(config.df, Some(DfEstimator::C5Star | DfEstimator::C7Star))
        || config.with_c6;
    Ok(TraceEstimates {
        a1: a1v,
        a2: a2m,
        a3: a3v,
        a4: a4v,
        c5: c5v,
        c6: c6v,
        c7: c7v,
        tau_p_hat: tau,
        f_p_hat: f,
        meta: EstimatorMeta {
            mode: config.mode,
            df: config.df,
            b: if subsampled { b } else { 0 },
            w: if config.df == Some(DfEstimator::C7Star) { config.w } else { 0 },
            seed: config.seed,
        },
    })
}

pub(crate) fn check_dims(sample: &SplitPlotSample, pair: &ProjectionPair) -> Result<()> {
    if sample.group_count() != pair.groups() || sample.dim() != pair.dim() {
        return Err(Error::DimensionMismatch(format!(
            "sample is {} groups x d={}, hypothesis is {} x {}",
            sample.group_count(),
            sample.dim(),
            pair.groups(),
            pair.dim()
        )));
    }
    Ok(())
}

pub(crate) fn require_min_size(sample: &SplitPlotSample, min: usize, what: &str) -> Result<()> {
    if let Some((i, n)) = sample.sizes().into_iter().enumerate().find(|&(_, n)| n < min) {
        return Err(Error::InsufficientSample(format!(
            "{what} needs at least {min} observations per group; group {} has {n}",
            i + 1
        )));
    }
    Ok(())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated_total<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Per-group weight `√(N/n_i)` times the whole-plot entries: `c_{ir} = (T_W)_{ir} N / √(n_i n_r)`.
pub(crate) fn stacked_weights(sample: &SplitPlotSample, pair: &ProjectionPair) -> Vec<Vec<f64>> {
    let total = sample.total() as f64;
    let sizes = sample.sizes();
    let a = sizes.len();
    (0..a)
        .map(|i| {
            (0..a)
                .map(|r| pair.t_whole()[(i, r)] * total / ((sizes[i] * sizes[r]) as f64).sqrt())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_f_boundaries() {
        let (t, f) = tau_f_hat(8.0, 4.0, 2, 3).unwrap();
        assert_eq!((t, f), (1.0, 1.0));
        let (t, f) = tau_f_hat(0.0, 4.0, 2, 3).unwrap();
        assert_eq!(t, 0.0);
        assert!((f - 6.0).abs() < 1e-12);
        let (t, f) = tau_f_hat(1.0, 4.0, 2, 3).unwrap();
        assert!((t - 1.0 / 64.0).abs() < 1e-15);
        assert!((f - 6.0).abs() < 1e-12);
        let (t, f) = tau_f_hat(-3.0, 4.0, 1, 100).unwrap();
        assert!((t - 9.0 / 64.0).abs() < 1e-15 && (f - 64.0 / 9.0).abs() < 1e-12);
        assert!(matches!(tau_f_hat(1.0, 0.0, 2, 3), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::default();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 1000.0);
    }
}
