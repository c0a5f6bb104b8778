//! Simple linear regression with t-based inference.

use serde::{Deserialize, Serialize};

use super::tdist;
use crate::error::{Error, Result};
use crate::io::json::{sig9, sig9_pair};

/// Two-sided confidence level of the reported intervals.
pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    #[serde(serialize_with = "sig9")]
    pub slope: f64,
    #[serde(serialize_with = "sig9")]
    pub intercept: f64,
    #[serde(serialize_with = "sig9_pair")]
    pub slope_ci: (f64, f64),
    #[serde(serialize_with = "sig9_pair")]
    pub intercept_ci: (f64, f64),
    #[serde(serialize_with = "sig9")]
    pub slope_se: f64,
    #[serde(serialize_with = "sig9")]
    pub intercept_se: f64,
    #[serde(serialize_with = "sig9")]
    pub slope_p: f64,
    #[serde(serialize_with = "sig9")]
    pub intercept_p: f64,
    #[serde(serialize_with = "sig9")]
    pub r_squared: f64,
    pub n: usize,
    pub df: usize,
}

fn p_value(estimate: f64, se: f64, df: f64) -> f64 {
    if se > 0.0 {
        tdist::two_sided_p(estimate / se, df)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
///
/// Standard errors use the residual variance with `n - 2` degrees of
/// freedom; intervals use the two-sided Student-t critical value.
pub fn ols_regression(points: &[(f64, f64)]) -> Result<RegressionResult> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(format!("regression needs at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::invalid("non-finite regression point"));
    }
    let nf = n as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("regression x values are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = points
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = n - 2;
    let s2 = sse / df as f64;
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / nf + x_mean * x_mean / sxx)).sqrt();
    let t_crit = tdist::quantile(0.5 + CONFIDENCE / 2.0, df as f64);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RegressionResult {
        slope,
        intercept,
        slope_ci: (slope - t_crit * slope_se, slope + t_crit * slope_se),
        intercept_ci: (intercept - t_crit * intercept_se, intercept + t_crit * intercept_se),
        slope_se,
        intercept_se,
        slope_p: p_value(slope, slope_se, df as f64),
        intercept_p: p_value(intercept, intercept_se, df as f64),
        r_squared,
        n,
        df,
    })
}
