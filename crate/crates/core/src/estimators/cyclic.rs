//! Estimators of `tr((T V_N)³)` built from the cyclic product
//! `Λ₁Λ₂Λ₃ = (Z₁₂ᵀTZ₃₄)(Z₃₄ᵀTZ₅₆)(Z₅₆ᵀTZ₁₂)`, whose expectation is `8·tr((TV_N)³)`.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::subsample::{check_draws, draw_distinct, stacked_form, subsampled_sums, weights, CHUNK};
use super::{check_dims, require_min_size, CompensatedSum, GramCache};
use crate::error::{Error, Result};
use crate::hypothesis::ProjectionPair;
use crate::model::SplitPlotSample;
use crate::rng::{substream, Domain};

#[inline]
fn cyclic_kernel(cache: &GramCache, w: &[Vec<f64>], idx: &[usize]) -> f64 {
    let l1 = stacked_form(cache, w, idx, 6, (0, 1), (2, 3));
    if l1 == 0.0 {
        return 0.0;
    }
    let l2 = stacked_form(cache, w, idx, 6, (2, 3), (4, 5));
    let l3 = stacked_form(cache, w, idx, 6, (4, 5), (0, 1));
    l1 * l2 * l3
}

/// `n!/(n−m)!` as a float.
pub(crate) fn falling(n: usize, m: usize) -> f64 {
    (0..m).map(|j| (n - j) as f64).product()
}

/// All ordered `m`-tuples of distinct indices from `0..n`, lexicographically.
pub(crate) fn ordered_tuples(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for x in 0..n {
            if !cur.contains(&x) {
                cur.push(x);
                rec(n, m, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, m, &mut cur, &mut out);
    out
}

pub(crate) fn check_cap(required: f64, cap: f64) -> Result<()> {
    if required > cap {
        return Err(Error::WorkCapExceeded { required, cap });
    }
    Ok(())
}

/// Sums `kernel` over the Cartesian product of per-group ordered `m`-tuples.
/// Parallel over the first group's tuples, reduced in fixed order.
pub(crate) fn exact_tuple_sum<F>(sizes: &[usize], m: usize, kernel: F) -> f64
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    let a = sizes.len();
    let tuples: Vec<Vec<Vec<usize>>> = sizes.iter().map(|&n| ordered_tuples(n, m)).collect();
    let partials: Vec<f64> = tuples[0]
        .par_iter()
        .map(|first| {
            let mut idx = vec![0usize; a * m];
            idx[..m].copy_from_slice(first);
            let mut odometer = vec![0usize; a];
            for i in 1..a {
                idx[i * m..(i + 1) * m].copy_from_slice(&tuples[i][0]);
            }
            let mut acc = CompensatedSum::default();
            loop {
                acc.add(kernel(&idx));
                // advance groups 1..a
                let mut g = a;
                loop {
                    if g == 1 {
                        return acc.value();
                    }
                    g -= 1;
                    odometer[g] += 1;
                    if odometer[g] < tuples[g].len() {
                        idx[g * m..(g + 1) * m].copy_from_slice(&tuples[g][odometer[g]]);
                        break;
                    }
                    odometer[g] = 0;
                    idx[g * m..(g + 1) * m].copy_from_slice(&tuples[g][0]);
                }
            }
        })
        .collect();
    let mut total = CompensatedSum::default();
    partials.iter().for_each(|&p| total.add(p));
    total.value()
}

pub(crate) fn c5_exact_cached(cache: &GramCache, sample: &SplitPlotSample, pair: &ProjectionPair, cap: f64) -> Result<f64> {
    require_min_size(sample, 6, "C_5")?;
    let sizes = sample.sizes();
    let count: f64 = sizes.iter().map(|&n| falling(n, 6)).product();
    check_cap(count, cap)?;
    let w = weights(sample, pair);
    let sum = exact_tuple_sum(&sizes, 6, |idx| cyclic_kernel(cache, &w, idx));
    Ok(sum / (8.0 * count))
}

/// Full symmetrized U-statistic over per-group ordered 6-tuples.
///
/// Fails with [`Error::WorkCapExceeded`] when `Π n_i!/(n_i−6)!` exceeds `work_cap`.
pub fn c5_exact(sample: &SplitPlotSample, pair: &ProjectionPair, work_cap: f64) -> Result<f64> {
    check_dims(sample, pair)?;
    let cache = GramCache::new(sample, pair.t_sub());
    c5_exact_cached(&cache, sample, pair, work_cap)
}

pub(crate) fn c5_star_cached(cache: &GramCache, sample: &SplitPlotSample, pair: &ProjectionPair, b: u64, seed: u64) -> Result<f64> {
    require_min_size(sample, 6, "C_5*")?;
    check_draws(b)?;
    let w = weights(sample, pair);
    let sums = subsampled_sums(seed, Domain::CubicSubsample, b, &sample.sizes(), 6, 1, |idx, out| {
        out[0] = cyclic_kernel(cache, &w, idx);
    });
    Ok(sums[0] / (8.0 * b as f64))
}

/// `(1/(8B)) Σ_b Λ₁Λ₂Λ₃(σ(b))` with independent per-group 6-subsamples.
pub fn c5_star(sample: &SplitPlotSample, pair: &ProjectionPair, b: u64, seed: u64) -> Result<f64> {
    check_dims(sample, pair)?;
    let cache = GramCache::new(sample, pair.t_sub());
    c5_star_cached(&cache, sample, pair, b, seed)
}

/// Independent uniform permutations `π_{j,i}` of `0..n_i`, for `j < w`.
pub fn draw_permutations(sizes: &[usize], w: u64, seed: u64) -> Vec<Vec<Vec<usize>>> {
    (0..w)
        .map(|j| {
            sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let mut rng = substream(seed, Domain::Permutation, &[j, i as u64]);
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect()
        })
        .collect()
}

fn check_permutations(sizes: &[usize], perms: &[Vec<Vec<usize>>]) -> Result<()> {
    if perms.is_empty() {
        return Err(Error::InvalidParameter("at least one permutation (w >= 1) is required".into()));
    }
    for p in perms {
        if p.len() != sizes.len() {
            return Err(Error::DimensionMismatch("one permutation per group is required".into()));
        }
        for (perm, &n) in p.iter().zip(sizes) {
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&x| x >= n || std::mem::replace(&mut seen[x], true)) {
                return Err(Error::InvalidInput(format!("not a permutation of 0..{n}")));
            }
        }
    }
    Ok(())
}

/// `C_7` for caller-supplied permutations: the mean over `j` of the common-index
/// 6-tuple sum over `0..n_min`, group `i` using indices `π_{j,i}(ℓ)`.
pub fn c7_with_permutations(
    sample: &SplitPlotSample,
    pair: &ProjectionPair,
    perms: &[Vec<Vec<usize>>],
    work_cap: f64,
) -> Result<f64> {
    check_dims(sample, pair)?;
    require_min_size(sample, 6, "C_7")?;
    let sizes = sample.sizes();
    check_permutations(&sizes, perms)?;
    let n_min = sample.min_size();
    let per_perm = falling(n_min, 6);
    check_cap(per_perm * perms.len() as f64, work_cap)?;
    let cache = GramCache::new(sample, pair.t_sub());
    let w = weights(sample, pair);
    let a = sizes.len();
    let tuples = ordered_tuples(n_min, 6);
    let mut total = CompensatedSum::default();
    for perm in perms {
        let partials: Vec<f64> = tuples
            .par_chunks(4096)
            .map(|chunk| {
                let mut idx = vec![0usize; a * 6];
                let mut acc = CompensatedSum::default();
                for t in chunk {
                    for i in 0..a {
                        for k in 0..6 {
                            idx[i * 6 + k] = perm[i][t[k]];
                        }
                    }
                    acc.add(cyclic_kernel(&cache, &w, &idx));
                }
                acc.value()
            })
            .collect();
        partials.iter().for_each(|&p| total.add(p));
    }
    Ok(total.value() / (8.0 * per_perm * perms.len() as f64))
}

/// `C_7(w)` with `w` random per-group permutations derived from `seed`.
pub fn c7(sample: &SplitPlotSample, pair: &ProjectionPair, w: u64, seed: u64, work_cap: f64) -> Result<f64> {
    let perms = draw_permutations(&sample.sizes(), w, seed);
    c7_with_permutations(sample, pair, &perms, work_cap)
}

pub(crate) fn c7_star_cached(
    cache: &GramCache,
    sample: &SplitPlotSample,
    pair: &ProjectionPair,
    w: u64,
    b: u64,
    seed: u64,
) -> Result<f64> {
    require_min_size(sample, 6, "C_7*")?;
    check_draws(b)?;
    if w == 0 {
        return Err(Error::InvalidParameter("w must be at least 1".into()));
    }
    let sizes = sample.sizes();
    let a = sizes.len();
    let n_min = sample.min_size();
    let perms = draw_permutations(&sizes, w, seed);
    let weights = weights(sample, pair);
    let chunks = b.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, Domain::CommonSubsample, &[k]);
            let mut common = [0usize; 6];
            let mut idx = vec![0usize; a * 6];
            let mut acc = CompensatedSum::default();
            for _ in 0..CHUNK.min(b - k * CHUNK) {
                draw_distinct(&mut rng, n_min, &mut common);
                for perm in &perms {
                    for i in 0..a {
                        for (slot, &l) in common.iter().enumerate() {
                            idx[i * 6 + slot] = perm[i][l];
                        }
                    }
                    acc.add(cyclic_kernel(cache, &weights, &idx));
                }
            }
            acc.value()
        })
        .collect();
    let mut total = CompensatedSum::default();
    partials.iter().for_each(|&p| total.add(p));
    Ok(total.value() / (8.0 * (w * b) as f64))
}

/// `C_7*(w, B)`: common 6-subsamples `σ₀(b)` of `0..n_min`, shared across the `w` permutations.
pub fn c7_star(sample: &SplitPlotSample, pair: &ProjectionPair, w: u64, b: u64, seed: u64) -> Result<f64> {
    check_dims(sample, pair)?;
    let cache = GramCache::new(sample, pair.t_sub());
    c7_star_cached(&cache, sample, pair, w, b, seed)
}
