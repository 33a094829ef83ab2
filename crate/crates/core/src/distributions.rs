//! Chi-square and normal distribution functions and the standardized `K_f` law.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn chi2(f: f64) -> Result<ChiSquared> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::InvalidParameter(format!("degrees of freedom must be positive and finite, got {f}")));
    }
    ChiSquared::new(f).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("probability must lie in (0,1), got {p}")));
    }
    Ok(())
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `P(χ²_f ≤ x)`; zero for `x ≤ 0`.
pub fn chi2_cdf(f: f64, x: f64) -> Result<f64> {
    let dist = chi2(f)?;
    Ok(if x <= 0.0 { 0.0 } else { dist.cdf(x) })
}

/// `P(χ²_f > x)`; one for `x ≤ 0`.
pub fn chi2_sf(f: f64, x: f64) -> Result<f64> {
    let dist = chi2(f)?;
    Ok(if x <= 0.0 { 1.0 } else { dist.sf(x) })
}

/// Quantile of `χ²_f`, refined by safeguarded Newton steps until `|F(x) − p| ≤ 1e−12`.
pub fn chi2_quantile(f: f64, p: f64) -> Result<f64> {
    check_prob(p)?;
    let dist = chi2(f)?;
    let mut x = dist.inverse_cdf(p);
    // polish; work on the survival side in the upper tail
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..100 {
        let value = if upper { dist.sf(x) } else { dist.cdf(x) };
        let err = value - target;
        if err.abs() <= 1e-12 * target.max(1e-300).min(1.0) || err == 0.0 {
            break;
        }
        // cdf increasing, sf decreasing
        let too_far = if upper { err < 0.0 } else { err > 0.0 };
        if too_far {
            hi = x;
        } else {
            lo = x;
        }
        let slope = dist.pdf(x) * if upper { -1.0 } else { 1.0 };
        let mut next = x - err / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(1.0) };
        }
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal survival function.
pub fn normal_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(std_normal().inverse_cdf(p))
}

/// `p`-quantile of `K_f = (χ²_f − f)/√(2f)`.
pub fn k_f_quantile(f: f64, p: f64) -> Result<f64> {
    if !(f >= 1.0) {
        return Err(Error::InvalidParameter(format!("K_f needs f >= 1, got {f}")));
    }
    Ok((chi2_quantile(f, p)? - f) / (2.0 * f).sqrt())
}

/// `P(K_f > w) = 1 − F_{χ²_f}(√(2f)·w + f)`.
pub fn k_f_sf(f: f64, w: f64) -> Result<f64> {
    if !(f >= 1.0) {
        return Err(Error::InvalidParameter(format!("K_f needs f >= 1, got {f}")));
    }
    if w == f64::INFINITY {
        return Ok(0.0);
    }
    chi2_sf(f, (2.0 * f).sqrt() * w + f)
}
