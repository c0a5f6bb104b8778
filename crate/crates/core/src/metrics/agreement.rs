//! Bland-Altman limits of agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json::sig9;

/// Multiplier on the SD of differences for 95% limits of agreement.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    /// Natural log of `x + 1`; keeps zero at zero.
    Log1p,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "log1p" => Ok(Transform::Log1p),
            other => Err(Error::invalid(format!("unknown transform {other:?}"))),
        }
    }
}

impl Transform {
    pub fn apply(self, x: f64) -> Result<f64> {
        match self {
            Transform::None => Ok(x),
            Transform::Log1p => {
                if !(x >= 0.0) {
                    return Err(Error::invalid(format!("log1p transform needs x >= 0, got {x}")));
                }
                Ok(x.ln_1p())
            }
        }
    }
}

pub fn log1p_values(xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| Transform::Log1p.apply(x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timepoint {
    PreTreatment,
    PostTreatment,
}

impl std::str::FromStr for Timepoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" | "pre_treatment" | "baseline" => Ok(Timepoint::PreTreatment),
            "post" | "post_treatment" | "followup" | "follow_up" => Ok(Timepoint::PostTreatment),
            other => Err(Error::invalid(format!("unknown timepoint {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPair {
    pub a: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Timepoint>,
}

impl AgreementPair {
    pub fn new(a: f64, b: f64) -> Self {
        AgreementPair { a, b, label: None }
    }
}

/// One point of the Bland-Altman plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferencePoint {
    #[serde(serialize_with = "sig9")]
    pub mean: f64,
    #[serde(serialize_with = "sig9")]
    pub diff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Timepoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanResult {
    #[serde(serialize_with = "sig9")]
    pub bias: f64,
    #[serde(serialize_with = "sig9")]
    pub loa_low: f64,
    #[serde(serialize_with = "sig9")]
    pub loa_high: f64,
    #[serde(serialize_with = "sig9")]
    pub sd_diff: f64,
    pub n: usize,
    pub transform: Transform,
    pub points: Vec<DifferencePoint>,
}

/// Bias and 95% limits of agreement of `a - b`, after applying
/// `transform` to both members. The SD uses the `n - 1` denominator.
pub fn bland_altman(pairs: &[AgreementPair], transform: Transform) -> Result<BlandAltmanResult> {
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "Bland-Altman needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let mut points = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !(p.a.is_finite() && p.b.is_finite()) {
            return Err(Error::invalid("non-finite value in agreement pair"));
        }
        let a = transform.apply(p.a)?;
        let b = transform.apply(p.b)?;
        points.push(DifferencePoint {
            mean: 0.5 * (a + b),
            diff: a - b,
            label: p.label,
        });
    }
    let n = points.len() as f64;
    let bias = points.iter().map(|p| p.diff).sum::<f64>() / n;
    let ss = points.iter().map(|p| (p.diff - bias).powi(2)).sum::<f64>();
    let sd_diff = (ss / (n - 1.0)).sqrt();
    Ok(BlandAltmanResult {
        bias,
        loa_low: bias - LOA_Z * sd_diff,
        loa_high: bias + LOA_Z * sd_diff,
        sd_diff,
        n: points.len(),
        transform,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn log1p_examples() {
        let out = log1p_values(&[0.0, E - 1.0, E * E - 1.0]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 1.0).abs() < 1e-15);
        assert!((out[2] - 2.0).abs() < 1e-15);
        assert!(log1p_values(&[-0.5]).is_err());
    }

    #[test]
    fn worked_example() {
        let pairs = [
            AgreementPair::new(10.0, 12.0),
            AgreementPair::new(20.0, 18.0),
            AgreementPair::new(30.0, 31.0),
        ];
        let r = bland_altman(&pairs, Transform::None).unwrap();
        assert!((r.bias + 1.0 / 3.0).abs() < 1e-12);
        assert!((r.sd_diff - 2.081_665_999_466_133).abs() < 1e-12);
        assert!((r.loa_low + 4.4134).abs() < 1e-3);
        assert!((r.loa_high - 3.7467).abs() < 1e-3);
        assert_eq!(r.points[1].mean, 19.0);
        assert_eq!(r.points[1].diff, 2.0);
    }

    #[test]
    fn identical_pairs_have_zero_limits() {
        let pairs = [AgreementPair::new(4.0, 4.0), AgreementPair::new(9.0, 9.0)];
        let r = bland_altman(&pairs, Transform::None).unwrap();
        assert_eq!((r.bias, r.loa_low, r.loa_high), (0.0, 0.0, 0.0));
        let pairs = [AgreementPair::new(0.0, 0.0), AgreementPair::new(5.0, 5.0)];
        let r = bland_altman(&pairs, Transform::Log1p).unwrap();
        assert_eq!((r.bias, r.loa_low, r.loa_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert!(bland_altman(&[AgreementPair::new(1.0, 2.0)], Transform::None).is_err());
        let neg = [AgreementPair::new(-1.0, 2.0), AgreementPair::new(1.0, 2.0)];
        assert!(bland_altman(&neg, Transform::Log1p).is_err());
        assert!(bland_altman(&neg, Transform::None).is_ok());
    }
}
