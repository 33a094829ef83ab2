//! The quadratic form `Q_N`, the standardized statistic `W_N`, and the three tests
//! `φ*` (`K_{f̂}` critical value), `ψ_z` (normal) and `ψ_χ` (standardized `χ²₁`).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_quantile, k_f_quantile, k_f_sf, normal_quantile};
use crate::error::{Error, Result};
use crate::estimators::{check_dims, estimate, EstimatorConfig, EstimatorMeta, TraceEstimates};
use crate::hypothesis::ProjectionPair;
use crate::model::SplitPlotSample;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `Q_N = N Σ_{i,r} (T_W)_{ir} X̄_iᵀ T_S X̄_r`.
pub fn q_statistic(sample: &SplitPlotSample, pair: &ProjectionPair) -> Result<f64> {
    check_dims(sample, pair)?;
    let a = sample.group_count();
    let means: Vec<_> = (0..a).map(|i| sample.group_mean(i)).collect();
    let projected: Vec<_> = means.iter().map(|m| pair.t_sub() * m).collect();
    let mut q = 0.0;
    for i in 0..a {
        for r in 0..a {
            let t = pair.t_whole()[(i, r)];
            if t != 0.0 {
                q += t * means[i].dot(&projected[r]);
            }
        }
    }
    Ok(sample.total() as f64 * q)
}

/// `(Q − Ê)/√(2A_4)`, times `√(N/(N−1))` when `correct` is set.
pub fn w_statistic(q: f64, e_hat: f64, a4: f64, total: usize, correct: bool) -> Result<f64> {
    if !(a4 > 0.0) {
        return Err(Error::DegenerateVariance(format!("A_4 = {a4}; the null variance estimate vanishes")));
    }
    let w = (q - e_hat) / (2.0 * a4).sqrt();
    Ok(if correct { w * correction_factor(total) } else { w })
}

pub fn correction_factor(total: usize) -> f64 {
    let n = total as f64;
    (n / (n - 1.0)).sqrt()
}

/// `P(K_f > w)`.
pub fn p_value(w: f64, f: f64) -> Result<f64> {
    k_f_sf(f, w)
}

/// `z_{1−α}`; `−∞` at `α = 1`.
pub fn z_critical(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    normal_quantile(1.0 - alpha)
}

/// `c_{1−α} = (χ²_{1;1−α} − 1)/√2`; `−∞` at `α = 1`.
pub fn chi_critical(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((chi2_quantile(1.0, 1.0 - alpha)? - 1.0) / std::f64::consts::SQRT_2)
}

/// `K_{f;1−α}`; `−∞` at `α = 1`.
pub fn k_critical(f: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    k_f_quantile(f, 1.0 - alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1], got {alpha}")));
    }
    Ok(())
}

/// Settings for [`run_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    pub estimator: EstimatorConfig,
    /// Multiply `W_N` by `√(N/(N−1))`.
    pub correction: bool,
    /// Use this `f` instead of `f̂_P`.
    pub forced_f: Option<f64>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { alpha: 0.05, estimator: EstimatorConfig::default(), correction: true, forced_f: None }
    }
}

/// Outcome of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub q: f64,
    pub e_hat: f64,
    pub var_hat: f64,
    pub w: f64,
    pub f_hat: Option<f64>,
    pub p_value: Option<f64>,
    pub reject_phi_star: Option<bool>,
    pub reject_psi_z: bool,
    pub reject_psi_chi: bool,
    pub alpha: f64,
    pub seed: u64,
    #[serde(rename = "B")]
    pub b: u64,
    pub critical_phi_star: Option<f64>,
    pub critical_psi_z: f64,
    pub critical_psi_chi: f64,
    pub correction_applied: bool,
    pub meta: EstimatorMeta,
    pub estimates: TraceEstimates,
    pub warnings: Vec<String>,
    pub version: String,
}

/// Flat single-row view of a [`TestResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub q: f64,
    pub e_hat: f64,
    pub var_hat: f64,
    pub w: f64,
    pub f_hat: Option<f64>,
    pub p_value: Option<f64>,
    pub reject_phi_star: Option<bool>,
    pub reject_psi_z: bool,
    pub reject_psi_chi: bool,
    pub alpha: f64,
    pub seed: u64,
    #[serde(rename = "B")]
    pub b: u64,
    pub mode: String,
    pub df_estimator: String,
    pub correction_applied: bool,
    pub warnings: String,
    pub version: String,
}

impl TestRecord {
    /// CSV header, in field order.
    pub const COLUMNS: [&'static str; 17] = [
        "q",
        "e_hat",
        "var_hat",
        "w",
        "f_hat",
        "p_value",
        "reject_phi_star",
        "reject_psi_z",
        "reject_psi_chi",
        "alpha",
        "seed",
        "B",
        "mode",
        "df_estimator",
        "correction_applied",
        "warnings",
        "version",
    ];
}

impl TestResult {
    pub fn record(&self) -> TestRecord {
        TestRecord {
            q: self.q,
            e_hat: self.e_hat,
            var_hat: self.var_hat,
            w: self.w,
            f_hat: self.f_hat,
            p_value: self.p_value,
            reject_phi_star: self.reject_phi_star,
            reject_psi_z: self.reject_psi_z,
            reject_psi_chi: self.reject_psi_chi,
            alpha: self.alpha,
            seed: self.seed,
            b: self.b,
            mode: self.meta.mode.as_str().to_string(),
            df_estimator: self.meta.df.map(|d| d.as_str().to_string()).unwrap_or_default(),
            correction_applied: self.correction_applied,
            warnings: self.warnings.join("; "),
            version: self.version.clone(),
        }
    }

    /// Header plus one data row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.serialize(self.record())?;
        writer.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Runs `φ*`, `ψ_z` and `ψ_χ` on one sample.
///
/// With fewer than six observations in some group `f̂_P` cannot be estimated;
/// unless `forced_f` is given, only `ψ_z` and `ψ_χ` are evaluated and a warning
/// is recorded. Fewer than four observations is an error.
pub fn run_test(sample: &SplitPlotSample, pair: &ProjectionPair, config: &TestConfig) -> Result<TestResult> {
    check_dims(sample, pair)?;
    check_alpha(config.alpha)?;
    if let Some(f) = config.forced_f {
        if !(f >= 1.0) {
            return Err(Error::InvalidParameter(format!("forced f must be >= 1, got {f}")));
        }
    }
    let mut warnings = Vec::new();
    let mut est_cfg = config.estimator;
    if config.forced_f.is_some() {
        est_cfg.df = None;
    } else if sample.min_size() < 6 && est_cfg.df.is_some() {
        warnings.push(format!(
            "smallest group has {} observations; f_hat needs at least 6, so only psi_z and psi_chi are reported",
            sample.min_size()
        ));
        est_cfg.df = None;
    }
    let estimates = estimate(sample, pair, &est_cfg)?;
    let q = q_statistic(sample, pair)?;
    let e_hat = estimates.e_hat(sample, pair);
    let w = w_statistic(q, e_hat, estimates.a4, sample.total(), config.correction)?;
    let f = config.forced_f.or(estimates.f_p_hat);

    let crit_z = z_critical(config.alpha)?;
    let crit_chi = chi_critical(config.alpha)?;
    let (crit_phi, p, phi) = match f {
        Some(f) => {
            let c = k_critical(f, config.alpha)?;
            (Some(c), Some(p_value(w, f)?), Some(w > c))
        }
        None => (None, None, None),
    };
    Ok(TestResult {
        q,
        e_hat,
        var_hat: 2.0 * estimates.a4,
        w,
        f_hat: f,
        p_value: p,
        reject_phi_star: phi,
        reject_psi_z: w > crit_z,
        reject_psi_chi: w > crit_chi,
        alpha: config.alpha,
        seed: est_cfg.seed,
        b: estimates.meta.b,
        critical_phi_star: crit_phi,
        critical_psi_z: crit_z,
        critical_psi_chi: crit_chi,
        correction_applied: config.correction,
        meta: estimates.meta,
        estimates,
        warnings,
        version: VERSION.to_string(),
    })
}
