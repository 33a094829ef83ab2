//! Subsampled estimators and the shared draw/accumulate machinery.
//!
//! Draws are split into fixed-size chunks. Chunk `k` owns the substream
//! `(seed, domain, k)` and its partial sums are combined in chunk order, so
//! the result is bit-identical for any number of worker threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dims, require_min_size, stacked_weights, CompensatedSum, GramCache};
use crate::error::{Error, Result};
use crate::hypothesis::ProjectionPair;
use crate::model::SplitPlotSample;
use crate::rng::{substream, Domain};

/// Draws per chunk.
pub(crate) const CHUNK: u64 = 2048;

/// Fills `out` with distinct uniform indices from `0..n`, in draw order.
pub(crate) fn draw_distinct(rng: &mut ChaCha8Rng, n: usize, out: &mut [usize]) {
    debug_assert!(out.len() <= n);
    for k in 0..out.len() {
        loop {
            let x = rng.random_range(0..n);
            if !out[..k].contains(&x) {
                out[k] = x;
                break;
            }
        }
    }
}

/// Sums `outputs` kernels over `b` draws of per-group `m`-subsamples.
///
/// `kernel` receives the flat index buffer (`idx[i*m + k]` is the `k`-th index
/// of group `i`) and adds its terms into the output slice.
pub(crate) fn subsampled_sums<F>(
    seed: u64,
    domain: Domain,
    b: u64,
    sizes: &[usize],
    m: usize,
    outputs: usize,
    kernel: F,
) -> Vec<f64>
where
    F: Fn(&[usize], &mut [f64]) + Sync,
{
    let chunks = b.div_ceil(CHUNK);
    let partials: Vec<Vec<CompensatedSum>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, domain, &[k]);
            let mut idx = vec![0usize; sizes.len() * m];
            let mut terms = vec![0.0; outputs];
            let mut acc = vec![CompensatedSum::default(); outputs];
            let draws = CHUNK.min(b - k * CHUNK);
            for _ in 0..draws {
                for (i, &n) in sizes.iter().enumerate() {
                    draw_distinct(&mut rng, n, &mut idx[i * m..(i + 1) * m]);
                }
                terms.iter_mut().for_each(|t| *t = 0.0);
                kernel(&idx, &mut terms);
                for (a, &t) in acc.iter_mut().zip(&terms) {
                    a.add(t);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![CompensatedSum::default(); outputs];
    for chunk in &partials {
        for (t, p) in total.iter_mut().zip(chunk) {
            t.add(p.value());
        }
    }
    total.iter().map(|t| t.value()).collect()
}

pub(crate) fn check_draws(b: u64) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidParameter("number of subsamples B must be at least 1".into()));
    }
    Ok(())
}

/// Subsampled analogues `A*_{i,1}`, `A*_{i,r,2}`, `A*_{i,3}`, `A*_4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarParts {
    pub a1: Vec<f64>,
    /// Off-diagonal `A*_{i,r,2}`, diagonal `A*_{i,3}`.
    pub a2: Vec<Vec<f64>>,
    pub a3: Vec<f64>,
    pub a4: f64,
    pub b: u64,
    pub seed: u64,
}

/// Computes the `A*` family from `b` draws of four distinct indices per group.
pub fn a_star_suite(sample: &SplitPlotSample, pair: &ProjectionPair, b: u64, seed: u64) -> Result<StarParts> {
    check_dims(sample, pair)?;
    check_draws(b)?;
    require_min_size(sample, 4, "A*_3")?;
    let cache = GramCache::new(sample, pair.t_sub());
    let sizes = sample.sizes();
    let a = sizes.len();
    // outputs: a1[0..a], a3[a..2a], then a2 for r < i in row order
    let off_pairs: Vec<(usize, usize)> = (0..a).flat_map(|i| (0..i).map(move |r| (i, r))).collect();
    let outputs = 2 * a + off_pairs.len();
    let sums = subsampled_sums(seed, Domain::PairSubsample, b, &sizes, 4, outputs, |idx, out| {
        for i in 0..a {
            let p = (idx[4 * i], idx[4 * i + 1]);
            out[i] = cache.bilinear(i, p, i, p);
            out[a + i] = cache.bilinear(i, p, i, (idx[4 * i + 2], idx[4 * i + 3])).powi(2);
        }
        for (k, &(i, r)) in off_pairs.iter().enumerate() {
            let v = cache.bilinear(i, (idx[4 * i], idx[4 * i + 1]), r, (idx[4 * r], idx[4 * r + 1]));
            out[2 * a + k] = v * v;
        }
    });
    let bf = b as f64;
    let a1: Vec<f64> = sums[..a].iter().map(|s| s / (2.0 * bf)).collect();
    let a3: Vec<f64> = sums[a..2 * a].iter().map(|s| s / (4.0 * bf)).collect();
    let mut a2 = vec![vec![0.0; a]; a];
    for i in 0..a {
        a2[i][i] = a3[i];
    }
    for (k, &(i, r)) in off_pairs.iter().enumerate() {
        let v = sums[2 * a + k] / (4.0 * bf);
        a2[i][r] = v;
        a2[r][i] = v;
    }
    let a4 = super::a4_from_parts(sample, pair, &a3, &a2)?;
    Ok(StarParts { a1, a2, a3, a4, b, seed })
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Expected fraction of ordered draw pairs `(j, ℓ) ∈ {1..B}²` whose subsamples
/// share an index in at least one group: `1 − (1 − 1/B)·Π C(n_i−m, m)/C(n_i, m)`.
pub fn overlap_fraction_formula(sizes: &[usize], m: usize, b: u64) -> Result<f64> {
    if b == 0 || m == 0 {
        return Err(Error::InvalidParameter("B and m must be positive".into()));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < m) {
        return Err(Error::InsufficientSample(format!("group of size {n} cannot hold a subsample of size {m}")));
    }
    let disjoint: f64 = sizes.iter().map(|&n| binomial(n - m, m) / binomial(n, m)).product();
    Ok(1.0 - (1.0 - 1.0 / b as f64) * disjoint)
}

/// Draws `b` per-group `m`-subsamples and returns the observed fraction of
/// ordered pairs (diagonal included) that overlap in some group.
pub fn empirical_overlap_fraction(sizes: &[usize], m: usize, b: u64, seed: u64) -> Result<f64> {
    overlap_fraction_formula(sizes, m, b)?;
    let a = sizes.len();
    let mut rng = substream(seed, Domain::Overlap, &[]);
    let draws: Vec<Vec<Vec<bool>>> = (0..b)
        .map(|_| {
            sizes
                .iter()
                .map(|&n| {
                    let mut idx = vec![0usize; m];
                    draw_distinct(&mut rng, n, &mut idx);
                    let mut mask = vec![false; n];
                    idx.iter().for_each(|&x| mask[x] = true);
                    mask
                })
                .collect()
        })
        .collect();
    let mut overlapping = 0u64;
    for j in 0..b as usize {
        for l in 0..b as usize {
            let hit = (0..a).any(|i| draws[j][i].iter().zip(&draws[l][i]).any(|(&x, &y)| x && y));
            overlapping += hit as u64;
        }
    }
    Ok(overlapping as f64 / (b * b) as f64)
}

/// Stacked bilinear form `Z_{(p)}ᵀ T Z_{(q)}` for index slots `p`, `q` of the flat buffer.
#[inline]
pub(crate) fn stacked_form(
    cache: &GramCache,
    weights: &[Vec<f64>],
    idx: &[usize],
    m: usize,
    p: (usize, usize),
    q: (usize, usize),
) -> f64 {
    let a = weights.len();
    let mut s = 0.0;
    for i in 0..a {
        let pi = (idx[i * m + p.0], idx[i * m + p.1]);
        for r in 0..a {
            let c = weights[i][r];
            if c != 0.0 {
                s += c * cache.bilinear(i, pi, r, (idx[r * m + q.0], idx[r * m + q.1]));
            }
        }
    }
    s
}

pub(crate) fn weights(sample: &SplitPlotSample, pair: &ProjectionPair) -> Vec<Vec<f64>> {
    stacked_weights(sample, pair)
}
