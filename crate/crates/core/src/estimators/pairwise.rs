//! `A_{i,1}`, `A_{i,r,2}`, `A_{i,3}`, `A_4` and `Ê_{H0}(Q_N)`.
//!
//! Each estimator comes in two forms: a closed form on the Gram matrix
//! `G = X T_S Xᵀ` (the default) and the definitional sum over index tuples,
//! kept as a reference implementation.

use nalgebra::{DMatrix, DVector};

use super::{check_dims, compensated_total, require_min_size, CompensatedSum, GramCache};
use crate::error::{Error, Result};
use crate::hypothesis::ProjectionPair;
use crate::linalg;
use crate::model::SplitPlotSample;

fn need(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::InsufficientSample(format!("{what} needs n >= {min}, got {n}")));
    }
    Ok(())
}

fn check_sub(group: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<()> {
    if t_sub.nrows() != group.ncols() || t_sub.ncols() != group.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "T_S is {}x{}, data has d={}",
            t_sub.nrows(),
            t_sub.ncols(),
            group.ncols()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// closed forms on a Gram matrix
// ---------------------------------------------------------------------------

/// `A_1 = tr(P_n G)/(n−1)`.
pub(crate) fn a1_from_gram(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows() as f64;
    (g.trace() - linalg::total(g) / n) / (n - 1.0)
}

/// `A_2 = 1ᵀ(M # M)1 / ((n_i−1)(n_r−1))` with `M = P_{n_i} G P_{n_r}`.
pub(crate) fn a2_from_gram(g: &DMatrix<f64>) -> f64 {
    let (ni, nr) = g.shape();
    let centered_cols = linalg::center_columns(g);
    let m = linalg::center_columns(&centered_cols.transpose());
    let ss = compensated_total(m.iter().map(|v| v * v));
    ss / ((ni - 1) * (nr - 1)) as f64
}

/// `A_3` from the within-group Gram matrix in `O(n²)`.
///
/// With `G'` the Gram matrix with zeroed diagonal, and sums over pairwise
/// distinct indices,
/// `S2 = Σ G'_{ac}²`, `S3 = Σ_{a,c≠e} G'_{ac}G'_{ae}`, `S4 = Σ G'_{ac}G'_{be}`,
/// the ordered-tuple kernel sum is `4(n−2)(n−3)S2 − 8(n−3)S3 + 4S4`.
pub(crate) fn a3_from_gram(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let nf = n as f64;
    let mut s2 = CompensatedSum::default();
    let mut s3 = CompensatedSum::default();
    let mut total = CompensatedSum::default();
    for a in 0..n {
        let mut row = 0.0;
        let mut row_sq = 0.0;
        for c in 0..n {
            if c != a {
                let v = g[(a, c)];
                row += v;
                row_sq += v * v;
            }
        }
        s2.add(row_sq);
        s3.add(row * row - row_sq);
        total.add(row);
    }
    let (s2, s3, tot) = (s2.value(), s3.value(), total.value());
    let s4 = tot * tot - 4.0 * s3 - 2.0 * s2;
    let kernel_sum = 4.0 * (nf - 2.0) * (nf - 3.0) * s2 - 8.0 * (nf - 3.0) * s3 + 4.0 * s4;
    kernel_sum / (4.0 * nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0))
}

/// Unbiased estimator of `tr(T_S Σ)` from one group.
pub fn a1(group: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group, t_sub)?;
    need(group.nrows(), 2, "A_1")?;
    let g = group * t_sub * group.transpose();
    Ok(a1_from_gram(&g))
}

/// Unbiased estimator of `tr(T_S Σ_i T_S Σ_r)` from two independent groups.
pub fn a2(group_i: &DMatrix<f64>, group_r: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group_i, t_sub)?;
    check_sub(group_r, t_sub)?;
    need(group_i.nrows(), 2, "A_2")?;
    need(group_r.nrows(), 2, "A_2")?;
    let g = group_i * t_sub * group_r.transpose();
    Ok(a2_from_gram(&g))
}

/// Unbiased estimator of `tr((T_S Σ)²)` from one group.
pub fn a3(group: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group, t_sub)?;
    need(group.nrows(), 4, "A_3")?;
    let g = group * t_sub * group.transpose();
    Ok(a3_from_gram(&g))
}

// ---------------------------------------------------------------------------
// definitional sums
// ---------------------------------------------------------------------------

fn difference(group: &DMatrix<f64>, p: usize, q: usize) -> DVector<f64> {
    (group.row(p) - group.row(q)).transpose()
}

/// `(1/(2·C(n,2))) Σ_{ℓ₁>ℓ₂} Yᵀ T_S Y`.
pub fn a1_definitional(group: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group, t_sub)?;
    let n = group.nrows();
    need(n, 2, "A_1")?;
    let mut acc = CompensatedSum::default();
    for l1 in 0..n {
        for l2 in 0..l1 {
            let y = difference(group, l1, l2);
            acc.add(y.dot(&(t_sub * &y)));
        }
    }
    Ok(acc.value() / (n * (n - 1)) as f64)
}

/// `(1/(4·C(n_i,2)C(n_r,2))) Σ_{ℓ₁>ℓ₂} Σ_{k₁>k₂} (Y_iᵀ T_S Y_r)²`.
pub fn a2_definitional(group_i: &DMatrix<f64>, group_r: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group_i, t_sub)?;
    check_sub(group_r, t_sub)?;
    let (ni, nr) = (group_i.nrows(), group_r.nrows());
    need(ni, 2, "A_2")?;
    need(nr, 2, "A_2")?;
    let ys: Vec<DVector<f64>> = (0..nr)
        .flat_map(|k1| (0..k1).map(move |k2| (k1, k2)))
        .map(|(k1, k2)| t_sub * difference(group_r, k1, k2))
        .collect();
    let mut acc = CompensatedSum::default();
    for l1 in 0..ni {
        for l2 in 0..l1 {
            let y = difference(group_i, l1, l2);
            for ty in &ys {
                acc.add(y.dot(ty).powi(2));
            }
        }
    }
    let pairs = (ni * (ni - 1) / 2) as f64 * (nr * (nr - 1) / 2) as f64;
    Ok(acc.value() / (4.0 * pairs))
}

/// `(1/(4·6·C(n,4))) Σ (Y_{ℓ₁ℓ₂}ᵀ T_S Y_{k₁k₂})²` over `ℓ₁>ℓ₂`, `k₁>k₂`, all four distinct.
pub fn a3_definitional(group: &DMatrix<f64>, t_sub: &DMatrix<f64>) -> Result<f64> {
    check_sub(group, t_sub)?;
    let n = group.nrows();
    need(n, 4, "A_3")?;
    let mut acc = CompensatedSum::default();
    let mut count = 0u64;
    for l1 in 0..n {
        for l2 in 0..l1 {
            let y = difference(group, l1, l2);
            let ty = t_sub * &y;
            for k1 in 0..n {
                if k1 == l1 || k1 == l2 {
                    continue;
                }
                for k2 in 0..k1 {
                    if k2 == l1 || k2 == l2 {
                        continue;
                    }
                    let z = difference(group, k1, k2);
                    acc.add(ty.dot(&z).powi(2));
                    count += 1;
                }
            }
        }
    }
    let nf = n as f64;
    let expected = nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) / 4.0;
    debug_assert_eq!(count as f64, expected);
    Ok(acc.value() / (4.0 * expected))
}

// ---------------------------------------------------------------------------
// combined estimators
// ---------------------------------------------------------------------------

pub(crate) type Parts = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

pub(crate) fn efficient_parts(cache: &GramCache) -> Result<Parts> {
    let a = cache.groups();
    let mut a1v = Vec::with_capacity(a);
    let mut a3v = Vec::with_capacity(a);
    for i in 0..a {
        let g = cache.gram(i, i);
        need(g.nrows(), 4, "A_3")?;
        a1v.push(a1_from_gram(g));
        a3v.push(a3_from_gram(g));
    }
    let mut a2m = vec![vec![0.0; a]; a];
    for i in 0..a {
        a2m[i][i] = a3v[i];
        for r in 0..i {
            let v = a2_from_gram(cache.gram(i, r));
            a2m[i][r] = v;
            a2m[r][i] = v;
        }
    }
    Ok((a1v, a2m, a3v))
}

pub(crate) fn definitional_parts(sample: &SplitPlotSample, t_sub: &DMatrix<f64>) -> Result<Parts> {
    let a = sample.group_count();
    let a1v = sample.groups().iter().map(|g| a1_definitional(g, t_sub)).collect::<Result<Vec<_>>>()?;
    let a3v = sample.groups().iter().map(|g| a3_definitional(g, t_sub)).collect::<Result<Vec<_>>>()?;
    let mut a2m = vec![vec![0.0; a]; a];
    for i in 0..a {
        a2m[i][i] = a3v[i];
        for r in 0..i {
            let v = a2_definitional(sample.group(i), sample.group(r), t_sub)?;
            a2m[i][r] = v;
            a2m[r][i] = v;
        }
    }
    Ok((a1v, a2m, a3v))
}

/// `A_4 = Σ_i (N/n_i)²(T_W)_{ii}² A_{i,3} + 2 Σ_{r<i} N²/(n_i n_r) (T_W)_{ir}² A_{i,r,2}`.
pub fn a4_from_parts(
    sample: &SplitPlotSample,
    pair: &ProjectionPair,
    a3v: &[f64],
    a2m: &[Vec<f64>],
) -> Result<f64> {
    let sizes = sample.sizes();
    let total = sample.total() as f64;
    let tw = pair.t_whole();
    let mut acc = CompensatedSum::default();
    for i in 0..sizes.len() {
        let wi = total / sizes[i] as f64;
        acc.add(wi * wi * tw[(i, i)].powi(2) * a3v[i]);
        for r in 0..i {
            let w = total * total / (sizes[i] * sizes[r]) as f64;
            acc.add(2.0 * w * tw[(i, r)].powi(2) * a2m[i][r]);
        }
    }
    Ok(acc.value())
}

/// Unbiased estimator of `tr((T V_N)²)`.
pub fn a4(sample: &SplitPlotSample, pair: &ProjectionPair) -> Result<f64> {
    check_dims(sample, pair)?;
    require_min_size(sample, 4, "A_4")?;
    let cache = GramCache::new(sample, pair.t_sub());
    let (_, a2m, a3v) = efficient_parts(&cache)?;
    a4_from_parts(sample, pair, &a3v, &a2m)
}

/// `Ê_{H0}(Q_N) = Σ_i (N/n_i)(T_W)_{ii} A_{i,1}`.
pub fn e_hat_q(sample: &SplitPlotSample, pair: &ProjectionPair) -> Result<f64> {
    check_dims(sample, pair)?;
    require_min_size(sample, 2, "E_hat")?;
    let total = sample.total() as f64;
    let mut acc = CompensatedSum::default();
    for (i, g) in sample.groups().iter().enumerate() {
        let tii = pair.t_whole()[(i, i)];
        if tii == 0.0 {
            continue;
        }
        acc.add(total / g.nrows() as f64 * tii * a1(g, pair.t_sub())?);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::centering_matrix;
    use crate::model::{ar1_covariance, SplitPlotDesign};
    use proptest::prelude::*;

    fn random_group(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let design = SplitPlotDesign::new(
            vec![n],
            DMatrix::from_fn(1, d, |_, t| t as f64 - 0.7),
            vec![ar1_covariance(d, 0.4).unwrap()],
        )
        .unwrap();
        design.sample(seed).group(0).clone()
    }

    fn random_psd(d: usize, seed: u64) -> DMatrix<f64> {
        let m = random_group(d + 2, d, seed ^ 0xABCD);
        m.transpose() * m
    }

    #[test]
    fn a1_single_pair() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let t = centering_matrix(3).unwrap();
        let y = difference(&x, 0, 1);
        let expected = 0.5 * y.dot(&(&t * &y));
        assert!((a1(&x, &t).unwrap() - expected).abs() < 1e-13);
        assert!((a1_definitional(&x, &t).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn identical_rows_give_zero() {
        let x = DMatrix::from_fn(6, 3, |_, t| 1.5 * t as f64 + 2.0);
        let t = DMatrix::identity(3, 3);
        assert!(a1(&x, &t).unwrap().abs() < 1e-12);
        assert!(a3(&x, &t).unwrap().abs() < 1e-10);
        let other = random_group(5, 3, 1);
        assert!(a2(&x, &other, &t).unwrap().abs() < 1e-10);
        assert!(a2(&other, &x, &t).unwrap().abs() < 1e-10);
    }

    #[test]
    fn insufficient_sizes() {
        let t = DMatrix::identity(2, 2);
        let one = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let three = random_group(3, 2, 4);
        assert!(matches!(a1(&one, &t), Err(Error::InsufficientSample(_))));
        assert!(matches!(a2(&one, &three, &t), Err(Error::InsufficientSample(_))));
        assert!(matches!(a3(&three, &t), Err(Error::InsufficientSample(_))));
    }

    #[test]
    fn a2_forms_agree_on_small_identity_case() {
        let gi = random_group(3, 2, 10);
        let gr = random_group(3, 2, 11);
        let t = DMatrix::identity(2, 2);
        let fast = a2(&gi, &gr, &t).unwrap();
        let slow = a2_definitional(&gi, &gr, &t).unwrap();
        assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn a3_forms_agree_at_n4() {
        let g = random_group(4, 2, 5);
        let t = random_psd(2, 9);
        let fast = a3(&g, &t).unwrap();
        let slow = a3_definitional(&g, &t).unwrap();
        assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn closed_forms_match_definitions(n1 in 4usize..=8, n2 in 2usize..=8, d in 1usize..=4, seed in 0u64..1000) {
            let gi = random_group(n1, d, seed);
            let gr = random_group(n2, d, seed + 7);
            let t = random_psd(d, seed + 3);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
            prop_assert!(rel(a1(&gi, &t).unwrap(), a1_definitional(&gi, &t).unwrap()) < 1e-9);
            prop_assert!(rel(a2(&gi, &gr, &t).unwrap(), a2_definitional(&gi, &gr, &t).unwrap()) < 1e-9);
            prop_assert!(rel(a3(&gi, &t).unwrap(), a3_definitional(&gi, &t).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn a4_single_group_reduces_to_a3() {
        let g = random_group(7, 3, 2);
        let sample = SplitPlotSample::new(vec![g.clone()]).unwrap();
        let t = centering_matrix(3).unwrap();
        let pair = ProjectionPair::new(DMatrix::identity(1, 1), t.clone()).unwrap();
        assert!((a4(&sample, &pair).unwrap() - a3(&g, &t).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn a4_zero_whole_plot() {
        let sample = SplitPlotSample::new(vec![random_group(5, 2, 1), random_group(6, 2, 2)]).unwrap();
        let pair = ProjectionPair::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(a4(&sample, &pair).unwrap(), 0.0);
        assert_eq!(e_hat_q(&sample, &pair).unwrap(), 0.0);
    }

    #[test]
    fn e_hat_single_group() {
        let g = random_group(6, 3, 8);
        let sample = SplitPlotSample::new(vec![g.clone()]).unwrap();
        let t = DMatrix::identity(3, 3);
        let pair = ProjectionPair::new(DMatrix::identity(1, 1), t.clone()).unwrap();
        assert!((e_hat_q(&sample, &pair).unwrap() - a1(&g, &t).unwrap()).abs() < 1e-12);
    }
}
