//! Candidate segmentation inside the disease region, lesion-level
//! cleaning, and the V_HI measurement itself.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, lesions_from_labels, Connectivity, LabelMode, Lesion};
use crate::error::{Error, Result};
use crate::io::json::sig9;
use crate::threshold::ThresholdPair;
use crate::volume::{mask_combine, BinaryMask, MaskOp, Volume};

/// In-plane regions smaller than this are treated as noise.
pub const DEFAULT_MIN_REGION_PIXELS: usize = 4;

/// Connectivity used to group sensitive voxels into lesions.
pub const LESION_CONNECTIVITY: Connectivity = Connectivity::Full26;
/// Connectivity used for small-region removal (8-connected in-plane).
pub const REGION_CONNECTIVITY: Connectivity = Connectivity::Full26;

/// Voxels of the disease region strictly above each limit, as
/// `(sensitive, conservative)`. A voxel equal to a limit is excluded.
pub fn threshold_disease_region(
    stir: &Volume,
    disease_mask: &BinaryMask,
    thresholds: &ThresholdPair,
) -> Result<(BinaryMask, BinaryMask)> {
    stir.geometry()
        .ensure_compatible(disease_mask.geometry(), "disease mask vs STIR")?;
    if thresholds.l_lower > thresholds.l_upper {
        return Err(Error::invalid(format!(
            "l_lower {} exceeds l_upper {}",
            thresholds.l_lower, thresholds.l_upper
        )));
    }
    let geometry = *stir.geometry();
    let mut sensitive = BinaryMask::empty(geometry);
    let mut conservative = BinaryMask::empty(geometry);
    for i in disease_mask.true_indices() {
        let v = stir.values()[i];
        if v > thresholds.l_lower {
            sensitive.set(i, true);
        }
        if v > thresholds.l_upper {
            conservative.set(i, true);
        }
    }
    Ok((sensitive, conservative))
}

/// Clear every 8-connected in-plane region with fewer than `min_pixels`
/// pixels.
pub fn remove_small_regions(mask: &BinaryMask, min_pixels: usize) -> Result<BinaryMask> {
    if min_pixels == 0 {
        return Err(Error::invalid("min_pixels must be >= 1"));
    }
    let (labels, count) = label_components(mask, REGION_CONNECTIVITY, LabelMode::PerSlice2d);
    let mut sizes = vec![0usize; count as usize + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let mut out = mask.clone();
    for (bit, &l) in out.bits_mut().iter_mut().zip(&labels) {
        if l != 0 && sizes[l as usize] < min_pixels {
            *bit = false;
        }
    }
    Ok(out)
}

/// Thresholded tiers plus the lesions a reader keeps or removes.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSegmentation {
    sensitive: BinaryMask,
    conservative: BinaryMask,
    lesions: Vec<Lesion>,
    labels: Vec<u32>,
    thresholds: ThresholdPair,
}

impl CandidateSegmentation {
    /// Rebuild a candidate from stored tier masks. Lesions are relabeled,
    /// which reproduces the original ids because labeling is deterministic.
    pub fn from_masks(
        sensitive: BinaryMask,
        conservative: BinaryMask,
        thresholds: ThresholdPair,
    ) -> Result<Self> {
        sensitive
            .geometry()
            .ensure_compatible(conservative.geometry(), "conservative vs sensitive mask")?;
        if !conservative.is_subset_of(&sensitive) {
            return Err(Error::invalid(
                "conservative mask is not contained in the sensitive mask",
            ));
        }
        let (labels, count) = label_components(&sensitive, LESION_CONNECTIVITY, LabelMode::Volume3d);
        let lesions = lesions_from_labels(&sensitive, &labels, count);
        Ok(CandidateSegmentation {
            sensitive,
            conservative,
            lesions,
            labels,
            thresholds,
        })
    }

    pub fn sensitive(&self) -> &BinaryMask {
        &self.sensitive
    }

    pub fn conservative(&self) -> &BinaryMask {
        &self.conservative
    }

    pub fn lesions(&self) -> &[Lesion] {
        &self.lesions
    }

    pub fn thresholds(&self) -> &ThresholdPair {
        &self.thresholds
    }

    pub fn lesion(&self, id: u32) -> Option<&Lesion> {
        id.checked_sub(1).and_then(|i| self.lesions.get(i as usize))
    }

    /// Lesion id at a voxel, 0 outside the sensitive tier.
    pub fn label_at(&self, index: usize) -> u32 {
        self.labels[index]
    }

    /// Per-voxel lesion ids (0 = background).
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Conservative-tier voxel count of one lesion.
    pub fn conservative_count(&self, id: u32) -> usize {
        self.lesion(id).map_or(0, |l| {
            l.voxel_indices
                .iter()
                .filter(|&&i| self.conservative.get(i))
                .count()
        })
    }
}

/// Threshold, drop small in-plane regions from the sensitive tier, clip
/// the conservative tier to what survives, and label 3D lesions.
pub fn build_candidate(
    stir: &Volume,
    disease_mask: &BinaryMask,
    thresholds: &ThresholdPair,
    min_region_pixels: usize,
) -> Result<CandidateSegmentation> {
    let (raw_sensitive, raw_conservative) = threshold_disease_region(stir, disease_mask, thresholds)?;
    let sensitive = remove_small_regions(&raw_sensitive, min_region_pixels)?;
    let conservative = mask_combine(&raw_conservative, &sensitive, MaskOp::And)?;
    CandidateSegmentation::from_masks(sensitive, conservative, *thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CleaningAction {
    /// Keep or remove a whole lesion.
    Decision { lesion_id: u32, decision: Decision },
    /// Clear individual sensitive voxels without removing their lesion.
    /// Only for structures segmented together with a lesion (joint space,
    /// foramen); the reason is mandatory.
    Erase { voxels: Vec<usize>, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub reader_id: String,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub action: CleaningAction,
}

/// Ordered reader actions. The last decision on a lesion wins; lesions
/// never mentioned are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CleaningDecisionLog {
    entries: Vec<LogEntry>,
}

impl CleaningDecisionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LogEntry>) -> Self {
        CleaningDecisionLog { entries }
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn decide(&mut self, lesion_id: u32, decision: Decision, reader_id: &str, timestamp_ms: u64) {
        self.push(LogEntry {
            reader_id: reader_id.to_owned(),
            timestamp_ms,
            action: CleaningAction::Decision { lesion_id, decision },
        });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Final decision per lesion that appears in the log.
    pub fn effective_decisions(&self) -> BTreeMap<u32, Decision> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if let CleaningAction::Decision { lesion_id, decision } = e.action {
                out.insert(lesion_id, decision);
            }
        }
        out
    }

    pub fn decision_for(&self, lesion_id: u32) -> Decision {
        self.entries
            .iter()
            .rev()
            .find_map(|e| match e.action {
                CleaningAction::Decision { lesion_id: id, decision } if id == lesion_id => Some(decision),
                _ => None,
            })
            .unwrap_or(Decision::Keep)
    }
}

/// Check one action against a candidate without applying it.
pub fn validate_action(cand: &CandidateSegmentation, action: &CleaningAction) -> Result<()> {
    match action {
        CleaningAction::Decision { lesion_id, .. } => {
            if cand.lesion(*lesion_id).is_none() {
                return Err(Error::UnknownLesion(*lesion_id));
            }
        }
        CleaningAction::Erase { voxels, reason } => {
            if reason.trim().is_empty() {
                return Err(Error::invalid("voxel erase requires a reason"));
            }
            if voxels.is_empty() {
                return Err(Error::invalid("voxel erase lists no voxels"));
            }
            let n = cand.sensitive.bits().len();
            if let Some(&v) = voxels.iter().find(|&&v| v >= n || !cand.sensitive.get(v)) {
                return Err(Error::invalid(format!(
                    "erase voxel {v} is not part of the candidate segmentation"
                )));
            }
        }
    }
    Ok(())
}

/// Cleaned `(sensitive, conservative)` masks. Removed lesions vanish from
/// both tiers; kept lesions are untouched apart from explicit voxel
/// erases.
pub fn apply_cleaning(
    cand: &CandidateSegmentation,
    log: &CleaningDecisionLog,
) -> Result<(BinaryMask, BinaryMask)> {
    for e in log.entries() {
        validate_action(cand, &e.action)?;
    }
    let mut sensitive = cand.sensitive.clone();
    let mut conservative = cand.conservative.clone();
    for (id, decision) in log.effective_decisions() {
        if decision == Decision::Remove {
            for &i in &cand.lesions[id as usize - 1].voxel_indices {
                sensitive.set(i, false);
                conservative.set(i, false);
            }
        }
    }
    for e in log.entries() {
        if let CleaningAction::Erase { voxels, .. } = &e.action {
            for &i in voxels {
                sensitive.set(i, false);
                conservative.set(i, false);
            }
        }
    }
    Ok((sensitive, conservative))
}

/// Voxel counts and physical volumes of both tiers. The sensitive tier is
/// the canonical V_HI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VhiMeasurement {
    pub voxel_count_sensitive: usize,
    #[serde(serialize_with = "sig9")]
    pub volume_mm3_sensitive: f64,
    pub voxel_count_conservative: usize,
    #[serde(serialize_with = "sig9")]
    pub volume_mm3_conservative: f64,
}

impl VhiMeasurement {
    pub fn from_counts(sensitive: usize, conservative: usize, voxel_volume_mm3: f64) -> Self {
        VhiMeasurement {
            voxel_count_sensitive: sensitive,
            volume_mm3_sensitive: sensitive as f64 * voxel_volume_mm3,
            voxel_count_conservative: conservative,
            volume_mm3_conservative: conservative as f64 * voxel_volume_mm3,
        }
    }
}

pub fn compute_vhi(sensitive: &BinaryMask, conservative: &BinaryMask) -> Result<VhiMeasurement> {
    sensitive
        .geometry()
        .ensure_compatible(conservative.geometry(), "conservative vs sensitive mask")?;
    if !conservative.is_subset_of(sensitive) {
        return Err(Error::invalid(
            "conservative mask is not contained in the sensitive mask",
        ));
    }
    Ok(VhiMeasurement::from_counts(
        sensitive.count_true(),
        conservative.count_true(),
        sensitive.geometry().voxel_volume_mm3(),
    ))
}
