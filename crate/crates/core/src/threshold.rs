//! Sensitive and conservative intensity limits from the normal-bone
//! intensity distribution.
//!
//! The conservative limit is the maximum normal-bone intensity. The
//! sensitive limit is `Q_U + n * IQR`, where the multiplier `n` starts at
//! 1.5 and steps by 0.05 until the gap between the two limits drops below
//! half the interquartile range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};

/// Fewer normal-bone voxels than this makes the quartiles meaningless.
pub const MIN_NORMAL_SAMPLES: usize = 8;

/// Starting multiplier, as a count of grid steps: `n = (30 + k) / 20`.
const GRID_ORIGIN: f64 = 30.0;
/// Steps per unit of `n` (a step of 0.05).
const GRID_STEPS_PER_UNIT: f64 = 20.0;

/// Name recorded in reports for the quartile convention.
pub const QUARTILE_METHOD: &str = "linear-interp-type7";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalBoneStats {
    #[serde(rename = "count")]
    pub sample_count: usize,
    pub i_max: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    pub iqr: f64,
}

impl NormalBoneStats {
    /// Stats from explicit quartiles, for callers that already know them.
    pub fn from_summary(sample_count: usize, q_lower: f64, q_upper: f64, i_max: f64) -> Result<Self> {
        if ![q_lower, q_upper, i_max].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("normal-bone statistics must be finite"));
        }
        if !(q_lower <= q_upper && q_upper <= i_max) {
            return Err(Error::invalid(format!(
                "need q_lower <= q_upper <= i_max, got {q_lower}, {q_upper}, {i_max}"
            )));
        }
        Ok(NormalBoneStats {
            sample_count,
            i_max,
            q_lower,
            q_upper,
            iqr: q_upper - q_lower,
        })
    }

    /// Statistics of an arbitrary sample.
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("normal-bone region is empty"));
        }
        if samples.len() < MIN_NORMAL_SAMPLES {
            return Err(Error::invalid(format!(
                "normal-bone region has {} voxels, need at least {MIN_NORMAL_SAMPLES}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN intensity in normal-bone region"));
        }
        samples.sort_by(f64::total_cmp);
        let q_lower = quantile_type7(&samples, 0.25);
        let q_upper = quantile_type7(&samples, 0.75);
        let i_max = samples[samples.len() - 1];
        NormalBoneStats::from_summary(samples.len(), q_lower, q_upper, i_max)
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at 1-based position `p * (N - 1) + 1`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    /// Conservative limit.
    pub l_upper: f64,
    /// Sensitive limit.
    pub l_lower: f64,
    pub n: f64,
    /// The sensitive limit overshot the conservative one and was pinned to
    /// it.
    pub clamped: bool,
    /// Number of 0.05 increments applied to the starting multiplier.
    pub iterations: u64,
}

impl ThresholdPair {
    /// Pair supplied directly rather than derived from a normal region.
    pub fn fixed(l_lower: f64, l_upper: f64) -> Result<Self> {
        if !(l_lower.is_finite() && l_upper.is_finite()) || l_lower > l_upper {
            return Err(Error::invalid(format!(
                "need finite l_lower <= l_upper, got {l_lower}, {l_upper}"
            )));
        }
        Ok(ThresholdPair {
            l_upper,
            l_lower,
            n: multiplier_at(0),
            clamped: false,
            iterations: 0,
        })
    }
}

/// Multiplier after `steps` increments of 0.05 from 1.5, computed directly
/// from the step count so long loops do not drift.
pub fn multiplier_at(steps: u64) -> f64 {
    (GRID_ORIGIN + steps as f64) / GRID_STEPS_PER_UNIT
}

/// Run the adaptive-multiplier rule on precomputed statistics.
///
/// Equivalent to stepping `n` from 1.5 in increments of 0.05 until
/// `I_max - (Q_U + n * IQR) < IQR / 2`, but the step count is found by
/// solving for it and correcting against the exact stopping test, so the
/// cost does not grow with the number of steps. The stopping test is
/// monotone in the step count, which makes the two searches agree exactly.
///
/// When the gap at termination is not positive, or `IQR` is zero, the
/// sensitive limit is pinned to the conservative one and `clamped` is set.
pub fn adapt_multiplier(stats: &NormalBoneStats) -> ThresholdPair {
    let l_upper = stats.i_max;
    let iqr = stats.iqr;
    let lower_at = |k: u64| stats.q_upper + multiplier_at(k) * iqr;

    if !(iqr > 0.0) {
        return ThresholdPair {
            l_upper,
            l_lower: l_upper,
            n: multiplier_at(0),
            clamped: true,
            iterations: 0,
        };
    }

    let half = iqr / 2.0;
    let stops = |k: u64| l_upper - lower_at(k) < half;

    // Smallest n with I_max - Q_U - n*IQR < IQR/2, i.e. n > (I_max - Q_U)/IQR - 1/2.
    let n_star = (l_upper - stats.q_upper) / iqr - 0.5;
    let estimate = ((n_star - multiplier_at(0)) * GRID_STEPS_PER_UNIT).floor() + 1.0;
    let mut k = if estimate.is_finite() {
        estimate.clamp(0.0, 2f64.powi(53)) as u64
    } else {
        0
    };
    while k > 0 && stops(k - 1) {
        k -= 1;
    }
    while !stops(k) {
        k += 1;
    }

    let l_lower = lower_at(k);
    let clamped = l_upper - l_lower <= 0.0;
    ThresholdPair {
        l_upper,
        l_lower: if clamped { l_upper } else { l_lower },
        n: multiplier_at(k),
        clamped,
        iterations: k,
    }
}

/// STIR intensities at the set voxels of the normal-bone mask.
pub fn normal_bone_stats(stir: &Volume, normal_mask: &BinaryMask) -> Result<NormalBoneStats> {
    stir.geometry()
        .ensure_compatible(normal_mask.geometry(), "normal-bone mask vs STIR")?;
    let samples: Vec<f64> = normal_mask.true_indices().map(|i| stir.values()[i]).collect();
    NormalBoneStats::from_samples(samples)
}

/// Thresholds together with the statistics they were derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    pub stats: NormalBoneStats,
    pub thresholds: ThresholdPair,
}

pub fn compute_thresholds(stir: &Volume, normal_mask: &BinaryMask) -> Result<ThresholdEstimate> {
    let stats = normal_bone_stats(stir, normal_mask)?;
    Ok(ThresholdEstimate {
        stats,
        thresholds: adapt_multiplier(&stats),
    })
}
