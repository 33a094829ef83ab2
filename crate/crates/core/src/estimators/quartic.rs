//! Estimators of `tr((T V_N)⁴)` from per-group 8-tuples:
//! `Λ₇/6 − Λ₈/2` with `Λ₇ = (Z₁₂ᵀTZ₃₄)⁴`, `Λ₈ = (Z₁₂ᵀTZ₃₄)²(Z₅₆ᵀTZ₇₈)²`,
//! whose expectation is `16·tr((TV_N)⁴)`.

use super::cyclic::{check_cap, exact_tuple_sum, falling};
use super::subsample::{check_draws, stacked_form, subsampled_sums, weights};
use super::{check_dims, require_min_size, GramCache};
use crate::error::Result;
use crate::hypothesis::ProjectionPair;
use crate::model::SplitPlotSample;
use crate::rng::Domain;

#[inline]
fn quartic_kernel(cache: &GramCache, w: &[Vec<f64>], idx: &[usize]) -> f64 {
    let l = stacked_form(cache, w, idx, 8, (0, 1), (2, 3));
    if l == 0.0 {
        return 0.0;
    }
    let m = stacked_form(cache, w, idx, 8, (4, 5), (6, 7));
    let l2 = l * l;
    l2 * l2 / 6.0 - l2 * m * m / 2.0
}

/// Exact `C_6`, subject to `work_cap` on `Π n_i!/(n_i−8)!`.
pub fn c6_exact(sample: &SplitPlotSample, pair: &ProjectionPair, work_cap: f64) -> Result<f64> {
    check_dims(sample, pair)?;
    require_min_size(sample, 8, "C_6")?;
    let sizes = sample.sizes();
    let count: f64 = sizes.iter().map(|&n| falling(n, 8)).product();
    check_cap(count, work_cap)?;
    let cache = GramCache::new(sample, pair.t_sub());
    let w = weights(sample, pair);
    let sum = exact_tuple_sum(&sizes, 8, |idx| quartic_kernel(&cache, &w, idx));
    Ok(sum / (16.0 * count))
}

pub(crate) fn c6_star_cached(cache: &GramCache, sample: &SplitPlotSample, pair: &ProjectionPair, b: u64, seed: u64) -> Result<f64> {
    require_min_size(sample, 8, "C_6*")?;
    check_draws(b)?;
    let w = weights(sample, pair);
    let sums = subsampled_sums(seed, Domain::QuarticSubsample, b, &sample.sizes(), 8, 1, |idx, out| {
        out[0] = quartic_kernel(cache, &w, idx);
    });
    Ok(sums[0] / (16.0 * b as f64))
}

/// `C_6*(B) = (1/(16B)) Σ_b (Λ₇/6 − Λ₈/2)(σ(b))`.
pub fn c6_star(sample: &SplitPlotSample, pair: &ProjectionPair, b: u64, seed: u64) -> Result<f64> {
    check_dims(sample, pair)?;
    let cache = GramCache::new(sample, pair.t_sub());
    c6_star_cached(&cache, sample, pair, b, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::hypothesis::centering_matrix;
    use nalgebra::DMatrix;

    #[test]
    fn identical_rows_and_sizes() {
        let g = DMatrix::from_fn(8, 2, |_, t| 3.0 * t as f64);
        let s = SplitPlotSample::new(vec![g]).unwrap();
        let p = ProjectionPair::new(DMatrix::identity(1, 1), centering_matrix(2).unwrap()).unwrap();
        assert_eq!(c6_exact(&s, &p, 1e7).unwrap(), 0.0);
        assert_eq!(c6_star(&s, &p, 50, 2).unwrap(), 0.0);
        let small = SplitPlotSample::new(vec![DMatrix::zeros(7, 2)]).unwrap();
        assert!(matches!(c6_star(&small, &p, 50, 2), Err(Error::InsufficientSample(_))));
    }
}
