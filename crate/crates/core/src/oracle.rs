//! Exact quantities for a known design: traces of `(T V_N)^k`, null moments of
//! `Q_N`, the spectrum of `T V_N T`, `τ_P`, `τ_CQ`, asymptotic levels of the
//! fixed-critical-value tests, quadratic-form moments and a sampler for the
//! weighted-`χ²` representation of `W̃_N`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_quantile, chi2_sf, normal_quantile, normal_sf};
use crate::error::{Error, Result};
use crate::hypothesis::{projector_from_hypothesis, ContrastMatrix, ProjectionPair};
use crate::linalg;
use crate::model::SplitPlotDesign;
use crate::rng::{substream, Domain};

fn check_design(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<()> {
    if pair.groups() != design.groups() || pair.dim() != design.dim() {
        return Err(Error::DimensionMismatch(format!(
            "design is {} groups x d={}, hypothesis is {} x {}",
            design.groups(),
            design.dim(),
            pair.groups(),
            pair.dim()
        )));
    }
    Ok(())
}

fn weights(design: &SplitPlotDesign) -> Vec<f64> {
    let total = design.total() as f64;
    design.sizes().iter().map(|&n| total / n as f64).collect()
}

/// `V_N = ⊕_i (N/n_i) Σ_i`.
pub fn v_matrix(design: &SplitPlotDesign, cap: usize) -> Result<DMatrix<f64>> {
    let (a, d) = (design.groups(), design.dim());
    if a * d > cap {
        return Err(Error::MaterializationCap { rows: a * d, cap });
    }
    let mut v = DMatrix::zeros(a * d, a * d);
    for (i, (sigma, w)) in design.covariances().iter().zip(weights(design)).enumerate() {
        v.view_mut((i * d, i * d), (d, d)).copy_from(&(sigma * w));
    }
    Ok(v)
}

/// `tr((T V_N)^k)` for `k = 1..=4` from `d×d` blocks.
///
/// `T V_N` has blocks `(T_W)_{ir} (N/n_r) T_S Σ_r`, so every trace is a sum over
/// index cycles of traces of products of `B_r = T_S Σ_r`.
pub fn trace_powers(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<[f64; 4]> {
    check_design(pair, design)?;
    let a = design.groups();
    let w = weights(design);
    let tw = pair.t_whole();
    let b: Vec<DMatrix<f64>> = design.covariances().iter().map(|s| pair.t_sub() * s).collect();
    let prod: Vec<Vec<DMatrix<f64>>> = (0..a)
        .into_par_iter()
        .map(|r| (0..a).map(|s| &b[r] * &b[s]).collect())
        .collect();
    // m[i][r] = (T_W)_{ir} w_r
    let m = |i: usize, r: usize| tw[(i, r)] * w[r];

    let mut tr = [0.0; 4];
    for i in 0..a {
        tr[0] += m(i, i) * b[i].trace();
    }
    for i in 0..a {
        for r in 0..a {
            let c = m(i, r) * m(r, i);
            if c != 0.0 {
                tr[1] += c * linalg::trace_of_product(&b[r], &b[i]);
            }
        }
    }
    for i in 0..a {
        for r in 0..a {
            for s in 0..a {
                let c = m(i, r) * m(r, s) * m(s, i);
                if c != 0.0 {
                    tr[2] += c * linalg::trace_of_product(&prod[r][s], &b[i]);
                }
            }
        }
    }
    for i in 0..a {
        for r in 0..a {
            for s in 0..a {
                for u in 0..a {
                    let c = m(i, r) * m(r, s) * m(s, u) * m(u, i);
                    if c != 0.0 {
                        tr[3] += c * linalg::trace_of_product(&prod[r][s], &prod[u][i]);
                    }
                }
            }
        }
    }
    Ok(tr)
}

/// `tr((T V_N)^k)` by explicit matrix powers of the materialized `T V_N`.
pub fn trace_power_materialized(pair: &ProjectionPair, design: &SplitPlotDesign, k: u32, cap: usize) -> Result<f64> {
    check_design(pair, design)?;
    if k == 0 {
        return Err(Error::InvalidParameter("power must be at least 1".into()));
    }
    let tv = pair.materialize(cap)? * v_matrix(design, cap)?;
    let mut p = tv.clone();
    for _ in 1..k {
        p = &p * &tv;
    }
    Ok(p.trace())
}

/// Null mean and variance of `Q_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean_q: f64,
    pub var_q: f64,
}

/// `E = Σ_i (N/n_i)(T_W)_{ii} tr(T_S Σ_i)`, `Var = 2 tr((T V_N)²)`.
pub fn exact_moments(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<MomentPair> {
    check_design(pair, design)?;
    let w = weights(design);
    let mean_q = (0..design.groups())
        .map(|i| w[i] * pair.t_whole()[(i, i)] * linalg::trace_of_product(pair.t_sub(), &design.covariances()[i]))
        .sum();
    let mut var = 0.0;
    let a = design.groups();
    for i in 0..a {
        let ti = pair.t_sub() * &design.covariances()[i];
        for r in 0..a {
            let t = pair.t_whole()[(i, r)];
            if t != 0.0 {
                let tr_ = pair.t_sub() * &design.covariances()[r];
                var += w[i] * w[r] * t * t * linalg::trace_of_product(&ti, &tr_);
            }
        }
    }
    Ok(MomentPair { mean_q, var_q: 2.0 * var })
}

/// `τ_P = tr²((TV_N)³) / tr³((TV_N)²)`.
pub fn tau_p(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<f64> {
    let tr = trace_powers(pair, design)?;
    if !(tr[1] > 0.0) {
        return Err(Error::DegenerateVariance("tr((TV_N)^2) vanishes".into()));
    }
    Ok(tr[2] * tr[2] / tr[1].powi(3))
}

/// `τ_CQ = tr((TV_N)⁴) / tr²((TV_N)²)`.
pub fn tau_cq(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<f64> {
    let tr = trace_powers(pair, design)?;
    if !(tr[1] > 0.0) {
        return Err(Error::DegenerateVariance("tr((TV_N)^2) vanishes".into()));
    }
    Ok(tr[3] / (tr[1] * tr[1]))
}

/// Eigenvalues `λ_s` of `T V_N T` (descending) and weights `β_s = λ_s/√(Σλ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    /// All eigenvalues vanish (`T V_N T = 0`); `betas` are then zero.
    pub degenerate: bool,
}

impl EigenSpectrum {
    /// Builds a spectrum from nonnegative eigenvalues.
    pub fn from_lambdas(mut lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidInput("eigenvalues must be finite and nonnegative".into()));
        }
        lambdas.sort_by(|x, y| y.total_cmp(x));
        let norm = lambdas.iter().map(|l| l * l).sum::<f64>().sqrt();
        let degenerate = norm == 0.0;
        let betas = lambdas.iter().map(|l| if degenerate { 0.0 } else { l / norm }).collect();
        Ok(Self { lambdas, betas, degenerate })
    }

    pub fn power_sum(&self, k: i32) -> f64 {
        self.lambdas.iter().map(|l| l.powi(k)).sum()
    }
}

/// Spectrum of the symmetrized `T V_N T`; eigenvalues in `[−1e−10·λ_max, 0)` are set to zero.
pub fn eigen_spectrum(pair: &ProjectionPair, design: &SplitPlotDesign, cap: usize) -> Result<EigenSpectrum> {
    check_design(pair, design)?;
    let t = pair.materialize(cap)?;
    let v = v_matrix(design, cap)?;
    let m = linalg::symmetrize(&(&t * &v * &t));
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-10 * max.max(f64::MIN_POSITIVE);
    let lambdas: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l >= 0.0 {
                l
            } else if l >= -tol {
                0.0
            } else {
                l
            }
        })
        .collect();
    if let Some(l) = lambdas.iter().find(|&&l| l < 0.0) {
        return Err(Error::InvalidInput(format!("T V_N T has a negative eigenvalue {l:e}")));
    }
    EigenSpectrum::from_lambdas(lambdas)
}

/// Tests with fixed critical values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedTest {
    /// Critical value `z_{1−α}`.
    PsiZ,
    /// Critical value `(χ²_{1;1−α} − 1)/√2`.
    PsiChi,
}

/// Limit regimes of `W_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `β₁ → 0`: standard normal limit.
    Beta1ToZero,
    /// `β₁ → 1`: standardized `χ²₁` limit.
    Beta1ToOne,
}

/// Limiting rejection probability of a fixed-critical-value test.
pub fn asymptotic_level(test: FixedTest, alpha: f64, regime: Regime) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(match (test, regime) {
        (FixedTest::PsiZ, Regime::Beta1ToZero) | (FixedTest::PsiChi, Regime::Beta1ToOne) => alpha,
        (FixedTest::PsiZ, Regime::Beta1ToOne) => {
            let z = normal_quantile(1.0 - alpha)?;
            chi2_sf(1.0, std::f64::consts::SQRT_2 * z + 1.0)?
        }
        (FixedTest::PsiChi, Regime::Beta1ToZero) => {
            let c = (chi2_quantile(1.0, 1.0 - alpha)? - 1.0) / std::f64::consts::SQRT_2;
            normal_sf(c)
        }
    })
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `E((XᵀTX)^r)` for `X ~ N(μ, Σ)`, `r ≤ 4`, via the cumulant recursion
/// `E(Q^r) = Σ_{j<r} C(r−1, j) g^{(r−1−j)} E(Q^j)`,
/// `g^{(k)} = 2^k k! [tr((TΣ)^{k+1}) + (k+1) μᵀ(TΣ)^k Tμ]`.
pub fn qf_moment(t: &DMatrix<f64>, sigma: &DMatrix<f64>, mu: &DVector<f64>, r: u32) -> Result<f64> {
    let d = t.nrows();
    if t.shape() != (d, d) || sigma.shape() != (d, d) || mu.len() != d {
        return Err(Error::DimensionMismatch("T, Σ and μ must share the dimension".into()));
    }
    if r == 0 || r > 4 {
        return Err(Error::InvalidParameter(format!("moment order {r} not in 1..=4")));
    }
    let ts = t * sigma;
    let t_mu = t * mu;
    let mut power = DMatrix::identity(d, d); // (TΣ)^k
    let mut g = Vec::with_capacity(r as usize);
    for k in 0..r {
        let next = &power * &ts;
        let quad = mu.dot(&(&power * &t_mu));
        g.push(2f64.powi(k as i32) * factorial(k) * (next.trace() + (k + 1) as f64 * quad));
        power = next;
    }
    let mut moments = vec![1.0];
    for order in 1..=r {
        let m: f64 = (0..order)
            .map(|j| binomial(order - 1, j) * g[(order - 1 - j) as usize] * moments[j as usize])
            .sum();
        moments.push(m);
    }
    Ok(moments[r as usize])
}

/// `E((XᵀTY)^k)` for independent centered `X ~ N(0, Σ_X)`, `Y ~ N(0, Σ_Y)`, `k ≤ 4`.
pub fn bilinear_moment(t: &DMatrix<f64>, sigma_x: &DMatrix<f64>, sigma_y: &DMatrix<f64>, k: u32) -> Result<f64> {
    let d = t.nrows();
    if t.shape() != (d, d) || sigma_x.shape() != (d, d) || sigma_y.shape() != (d, d) {
        return Err(Error::DimensionMismatch("T, Σ_X and Σ_Y must share the dimension".into()));
    }
    let m = t * sigma_x * t * sigma_y;
    match k {
        1 | 3 => Ok(0.0),
        2 => Ok(m.trace()),
        4 => Ok(6.0 * linalg::trace_of_product(&m, &m) + 3.0 * m.trace().powi(2)),
        _ => Err(Error::InvalidParameter(format!("moment order {k} not in 1..=4"))),
    }
}

const DRAW_CHUNK: u64 = 1024;

/// `reps` i.i.d. draws of `Σ_s β_s (C_s − 1)/√2`, `C_s ~ χ²₁`.
pub fn representation_sampler(spectrum: &EigenSpectrum, reps: u64, seed: u64) -> Vec<f64> {
    let betas: Vec<f64> = spectrum.betas.iter().cloned().filter(|&b| b != 0.0).collect();
    let chunks = reps.div_ceil(DRAW_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = substream(seed, Domain::Representation, &[c]);
            let count = DRAW_CHUNK.min(reps - c * DRAW_CHUNK);
            let betas = &betas;
            (0..count)
                .map(move |_| {
                    betas
                        .iter()
                        .map(|b| {
                            let z: f64 = rng.sample(StandardNormal);
                            b * (z * z - 1.0)
                        })
                        .sum::<f64>()
                        / std::f64::consts::SQRT_2
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `reps` draws of `(Q_N − E(Q_N))/√Var(Q_N)` from data simulated under `design`,
/// standardized with the exact moments.
pub fn standardized_q_draws(pair: &ProjectionPair, design: &SplitPlotDesign, reps: u64, seed: u64) -> Result<Vec<f64>> {
    let moments = exact_moments(pair, design)?;
    let sd = moments.var_q.sqrt();
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let sample = design.sample_replication(seed, r);
            Ok((crate::engine::q_statistic(&sample, pair)? - moments.mean_q) / sd)
        })
        .collect()
}

/// Outcome of a randomized sweep over the trace inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub instances: usize,
    pub checks: usize,
    pub violations: usize,
    /// Smallest relative slack `(rhs − lhs)/max(|lhs|, |rhs|)` observed.
    pub min_slack: f64,
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, d, d);
    &g * g.transpose() + DMatrix::identity(d, d) * 1e-3
}

/// Checks, on `instances` random `(T, Σ_i, Σ_r)` with `d ≤ max_d`:
/// `tr²(A^{a+b}) ≤ tr(A^{2a}) tr(A^{2b})` and `tr(A^{2k}) ≤ tr²(A^k)` for `A = TΣ`,
/// and `tr((TΣ_iTΣ_r)²) ≤ tr²(TΣ_iTΣ_r)`.
pub fn trace_inequality_checks(instances: usize, max_d: usize, seed: u64) -> Result<InequalityReport> {
    if max_d == 0 {
        return Err(Error::InvalidParameter("max_d must be positive".into()));
    }
    let mut report = InequalityReport { instances, checks: 0, violations: 0, min_slack: f64::INFINITY };
    let mut check = |lhs: f64, rhs: f64| {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let slack = (rhs - lhs) / scale;
        report.checks += 1;
        report.min_slack = report.min_slack.min(slack);
        if slack < -1e-9 {
            report.violations += 1;
        }
    };
    for inst in 0..instances {
        let mut rng = substream(seed, Domain::Representation, &[u64::MAX, inst as u64]);
        let d = rng.random_range(1..=max_d);
        let rows = rng.random_range(1..=d);
        let t = projector_from_hypothesis(&ContrastMatrix::new(random_matrix(&mut rng, rows, d))?);
        let si = random_spd(&mut rng, d);
        let sr = random_spd(&mut rng, d);
        let a = &t * &si;
        let mut powers = vec![DMatrix::identity(d, d)];
        for k in 1..=6 {
            let next = &powers[k - 1] * &a;
            powers.push(next);
        }
        let tr = |k: usize| powers[k].trace();
        for (p, q) in [(1, 1), (1, 2), (1, 3), (2, 2)] {
            check(tr(p + q).powi(2), tr(2 * p) * tr(2 * q));
        }
        for k in 1..=3 {
            check(tr(2 * k), tr(k).powi(2));
        }
        let m = &t * &si * &t * &sr;
        check(linalg::trace_of_product(&m, &m), m.trace().powi(2));
    }
    Ok(report)
}

/// One line of an oracle report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub quantity: String,
    pub value: f64,
    pub method: String,
}

impl OracleRow {
    fn new(quantity: impl Into<String>, value: f64, method: &str) -> Self {
        Self { quantity: quantity.into(), value, method: method.into() }
    }
}

/// Traces, moments, `τ_P`, `τ_CQ` and `f_P` for a design and hypothesis.
pub fn oracle_report(pair: &ProjectionPair, design: &SplitPlotDesign) -> Result<Vec<OracleRow>> {
    let tr = trace_powers(pair, design)?;
    let moments = exact_moments(pair, design)?;
    let mut rows: Vec<OracleRow> =
        (0..4).map(|k| OracleRow::new(format!("trace_tv_{}", k + 1), tr[k], "blockwise")).collect();
    rows.push(OracleRow::new("mean_q", moments.mean_q, "blockwise"));
    rows.push(OracleRow::new("var_q", moments.var_q, "blockwise"));
    if tr[1] > 0.0 {
        let tau = tr[2] * tr[2] / tr[1].powi(3);
        rows.push(OracleRow::new("tau_p", tau, "blockwise"));
        rows.push(OracleRow::new("f_p", 1.0 / tau, "blockwise"));
        rows.push(OracleRow::new("tau_cq", tr[3] / (tr[1] * tr[1]), "blockwise"));
    }
    Ok(rows)
}

/// The eight nontrivial limiting levels plus the matched ones, for `α ∈ {0.10, 0.05, 0.01}`.
pub fn level_table() -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for alpha in [0.10, 0.05, 0.01] {
        for (test, tname) in [(FixedTest::PsiZ, "psi_z"), (FixedTest::PsiChi, "psi_chi")] {
            for (regime, rname) in [(Regime::Beta1ToZero, "beta1_to_0"), (Regime::Beta1ToOne, "beta1_to_1")] {
                rows.push(OracleRow::new(
                    format!("level_{tname}_{rname}_alpha_{alpha}"),
                    asymptotic_level(test, alpha, regime)?,
                    "closed_form",
                ));
            }
        }
    }
    Ok(rows)
}

/// Writes `quantity,value,method` rows.
pub fn write_oracle_csv<W: std::io::Write>(rows: &[OracleRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
