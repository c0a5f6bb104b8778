//! JSON documents exchanged between CLI stages and written by the service.

use serde::{Deserialize, Serialize};

use super::json::{sig9, sig9_seq};
use crate::components::LesionSummary;
use crate::error::{Error, Result};
use crate::segment::{VhiMeasurement, DEFAULT_MIN_REGION_PIXELS};
use crate::threshold::{NormalBoneStats, ThresholdEstimate, ThresholdPair, QUARTILE_METHOD};
use crate::{FORMAT_VERSION, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub count: usize,
    #[serde(serialize_with = "sig9")]
    pub q_lower: f64,
    #[serde(serialize_with = "sig9")]
    pub q_upper: f64,
    #[serde(serialize_with = "sig9")]
    pub iqr: f64,
    #[serde(serialize_with = "sig9")]
    pub i_max: f64,
}

impl From<&NormalBoneStats> for StatsReport {
    fn from(s: &NormalBoneStats) -> Self {
        StatsReport {
            count: s.sample_count,
            q_lower: s.q_lower,
            q_upper: s.q_upper,
            iqr: s.iqr,
            i_max: s.i_max,
        }
    }
}

/// `thresholds.json`. The limits are written losslessly because `segment`
/// compares intensities against them with a strict inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub format_version: u32,
    pub n: f64,
    pub l_lower: f64,
    pub l_upper: f64,
    pub clamped: bool,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsReport>,
    pub quartile_method: String,
}

impl ThresholdReport {
    pub fn from_estimate(est: &ThresholdEstimate) -> Self {
        let t = &est.thresholds;
        ThresholdReport {
            format_version: FORMAT_VERSION,
            n: t.n,
            l_lower: t.l_lower,
            l_upper: t.l_upper,
            clamped: t.clamped,
            iterations: t.iterations,
            stats: Some(StatsReport::from(&est.stats)),
            quartile_method: QUARTILE_METHOD.to_owned(),
        }
    }

    pub fn to_pair(&self) -> Result<ThresholdPair> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Unsupported(format!(
                "thresholds format_version {}",
                self.format_version
            )));
        }
        let mut pair = ThresholdPair::fixed(self.l_lower, self.l_upper)?;
        pair.n = self.n;
        pair.clamped = self.clamped;
        pair.iterations = self.iterations;
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionEntry {
    pub id: u32,
    pub voxel_count: usize,
    pub bbox: [[usize; 2]; 3],
    pub slice_range: [usize; 2],
    #[serde(serialize_with = "sig9_seq")]
    pub centroid: [f64; 3],
}

impl From<LesionSummary> for LesionEntry {
    fn from(s: LesionSummary) -> Self {
        LesionEntry {
            id: s.id,
            voxel_count: s.voxel_count,
            bbox: s.bbox,
            slice_range: s.slice_range,
            centroid: s.centroid,
        }
    }
}

/// `lesions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionsFile {
    pub format_version: u32,
    pub connectivity: String,
    pub lesions: Vec<LesionEntry>,
}

impl LesionsFile {
    pub fn new(lesions: impl IntoIterator<Item = LesionSummary>) -> Self {
        LesionsFile {
            format_version: FORMAT_VERSION,
            connectivity: "full26".to_owned(),
            lesions: lesions.into_iter().map(LesionEntry::from).collect(),
        }
    }
}

/// How a measurement was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub lesion_connectivity: String,
    pub small_region_connectivity: String,
    pub min_region_pixels: usize,
    pub quartile_method: String,
    pub threshold_comparison: String,
}

impl Provenance {
    pub fn current(min_region_pixels: usize) -> Self {
        Provenance {
            tool: "vhi".to_owned(),
            tool_version: TOOL_VERSION.to_owned(),
            lesion_connectivity: "full26".to_owned(),
            small_region_connectivity: "8-connected-in-plane".to_owned(),
            min_region_pixels,
            quartile_method: QUARTILE_METHOD.to_owned(),
            threshold_comparison: "strictly-greater".to_owned(),
        }
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::current(DEFAULT_MIN_REGION_PIXELS)
    }
}

/// `vhi_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VhiReport {
    pub format_version: u32,
    #[serde(flatten)]
    pub measurement: VhiMeasurement,
    /// The tier that defines V_HI.
    pub canonical_tier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdPair>,
    pub provenance: Provenance,
}

impl VhiReport {
    pub fn new(measurement: VhiMeasurement, thresholds: Option<ThresholdPair>, provenance: Provenance) -> Self {
        VhiReport {
            format_version: FORMAT_VERSION,
            measurement,
            canonical_tier: "sensitive".to_owned(),
            thresholds,
            provenance,
        }
    }
}
