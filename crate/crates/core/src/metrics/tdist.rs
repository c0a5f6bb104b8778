//! Student-t tail probabilities and quantiles (standard location/scale).

use statrs::distribution::{ContinuousCDF, StudentsT};

fn dist(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive")
}

pub fn cdf(t: f64, df: f64) -> f64 {
    dist(df).cdf(t)
}

/// `P(|T| >= |t|)` for `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    // The upper tail directly, so small p-values keep their precision.
    (2.0 * dist(df).sf(t.abs())).min(1.0)
}

/// Inverse CDF for `p ∈ (0, 1)`.
pub fn quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability {p} outside (0, 1)");
    dist(df).inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cauchy_closed_form() {
        // df = 1 is the Cauchy distribution.
        for t in [-3.0f64, -0.5, 0.0, 0.7, 12.0] {
            let exact = 0.5 + t.atan() / PI;
            assert!((cdf(t, 1.0) - exact).abs() < 1e-13, "t={t}");
        }
        assert!((quantile(0.975, 1.0) - (PI * 0.475).tan()).abs() < 1e-9);
    }

    #[test]
    fn df2_closed_form() {
        // F(t) = 1/2 + t / (2 sqrt(2 + t^2))
        for t in [-4.0f64, -1.0, 0.3, 2.5] {
            let exact = 0.5 + t / (2.0 * (2.0f64 + t * t).sqrt());
            assert!((cdf(t, 2.0) - exact).abs() < 1e-13);
            let p = 1.0 - t.abs() / (2.0f64 + t * t).sqrt();
            assert!((two_sided_p(t, 2.0) - p).abs() < 1e-13);
        }
    }

    #[test]
    fn familiar_critical_values() {
        assert!((quantile(0.975, 10.0) - 2.228_138_851_964_938).abs() < 1e-9);
        assert!((quantile(0.975, 30.0) - 2.042_272_456_301_237).abs() < 1e-9);
        assert!((quantile(0.025, 5.0) + 2.570_581_835_636_314).abs() < 1e-9);
    }

    #[test]
    fn two_sided_p_edges() {
        assert_eq!(two_sided_p(0.0, 7.0), 1.0);
        assert_eq!(two_sided_p(f64::INFINITY, 7.0), 0.0);
        assert!(two_sided_p(f64::NAN, 7.0).is_nan());
    }
}
