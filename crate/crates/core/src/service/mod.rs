//! Cleaning sessions: a reader walks through candidate lesions, keeps or
//! removes each one, and the session reports V_HI after every decision.
//!
//! Every session lives in its own directory under the service data dir.
//! The candidate masks are written once at creation; reader actions are
//! appended to `decisions.jsonl` and fsynced before they take effect, so
//! replaying that file after a restart reproduces the session exactly.

mod http;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::io::report::StatsReport;
use crate::segment::{validate_action, CandidateSegmentation, CleaningAction, Decision, LogEntry, VhiMeasurement};
use crate::threshold::ThresholdPair;
use crate::volume::BinaryMask;

pub use http::{router, serve, AppConfig};
pub use store::{CreateSessionRequest, SessionStore, StoreOptions, ThresholdSource};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const LESIONS_FILE: &str = "lesions.json";
pub const CANDIDATE_SENSITIVE_FILE: &str = "candidate_sensitive.rle.json";
pub const CANDIDATE_CONSERVATIVE_FILE: &str = "candidate_conservative.rle.json";
pub const FINAL_SENSITIVE_FILE: &str = "final_sensitive.rle.json";
pub const FINAL_CONSERVATIVE_FILE: &str = "final_conservative.rle.json";
pub const VHI_REPORT_FILE: &str = "vhi_report.json";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    SessionNotFound(String),

    #[error("session {0} is finalized")]
    Finalized(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("voxel erase is disabled on this server")]
    EraseDisabled,

    #[error("data dir {0} is in use by another process")]
    Locked(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl ServiceError {
    /// HTTP status the error maps to.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::SessionNotFound(_) => 404,
            ServiceError::Finalized(_) => 409,
            ServiceError::BadRequest(_) => 400,
            ServiceError::EraseDisabled => 403,
            ServiceError::Locked(_) => 503,
            ServiceError::Core(Error::UnknownLesion(_)) => 404,
            ServiceError::Core(Error::Io { .. }) => 500,
            ServiceError::Core(_) => 422,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::Finalized(_) => "session_finalized",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::EraseDisabled => "erase_disabled",
            ServiceError::Locked(_) => "data_dir_locked",
            ServiceError::Core(e) => e.kind(),
        }
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// `manifest.json`: everything needed to rebuild a session besides the
/// stored masks, volumes and decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub format_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub reader_id: String,
    pub created_ms: u64,
    /// Input role (`stir`, `t1w`, `disease_mask`, ...) to source file.
    pub inputs: BTreeMap<String, InputRecord>,
    pub thresholds: ThresholdPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_stats: Option<StatsReport>,
    pub min_region_pixels: usize,
    pub lesion_count: usize,
    pub candidate_vhi: VhiMeasurement,
    pub lesions_file: String,
    pub decision_log: String,
    pub has_t1w: bool,
    pub warnings: Vec<String>,
}

/// Running tally that answers V_HI queries without re-applying the log.
#[derive(Debug, Clone)]
struct LiveState {
    decisions: Vec<Decision>,
    decided: Vec<bool>,
    sensitive_left: Vec<usize>,
    conservative_left: Vec<usize>,
    erased: BTreeSet<usize>,
    voxel_volume_mm3: f64,
}

impl LiveState {
    fn new(cand: &CandidateSegmentation) -> Self {
        let lesions = cand.lesions();
        LiveState {
            decisions: vec![Decision::Keep; lesions.len()],
            decided: vec![false; lesions.len()],
            sensitive_left: lesions.iter().map(|l| l.voxel_count()).collect(),
            conservative_left: lesions.iter().map(|l| cand.conservative_count(l.id)).collect(),
            erased: BTreeSet::new(),
            voxel_volume_mm3: cand.sensitive().geometry().voxel_volume_mm3(),
        }
    }

    fn apply(&mut self, cand: &CandidateSegmentation, action: &CleaningAction) {
        match action {
            CleaningAction::Decision { lesion_id, decision } => {
                let i = *lesion_id as usize - 1;
                self.decisions[i] = *decision;
                self.decided[i] = true;
            }
            CleaningAction::Erase { voxels, .. } => {
                for &v in voxels {
                    if self.erased.insert(v) {
                        let i = cand.label_at(v) as usize - 1;
                        self.sensitive_left[i] -= 1;
                        if cand.conservative().get(v) {
                            self.conservative_left[i] -= 1;
                        }
                    }
                }
            }
        }
    }

    fn vhi(&self) -> VhiMeasurement {
        let (mut s, mut c) = (0, 0);
        for (i, d) in self.decisions.iter().enumerate() {
            if *d == Decision::Keep {
                s += self.sensitive_left[i];
                c += self.conservative_left[i];
            }
        }
        VhiMeasurement::from_counts(s, c, self.voxel_volume_mm3)
    }

    fn keeps_voxel(&self, cand: &CandidateSegmentation, index: usize) -> bool {
        let label = cand.label_at(index);
        label != 0 && self.decisions[label as usize - 1] == Decision::Keep && !self.erased.contains(&index)
    }
}

/// Lesion summary plus the reader's current decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionView {
    pub id: u32,
    pub voxel_count: usize,
    pub conservative_voxel_count: usize,
    pub bbox: [[usize; 2]; 3],
    pub slice_range: [usize; 2],
    #[serde(serialize_with = "crate::io::json::sig9_seq")]
    pub centroid: [f64; 3],
    pub decision: Decision,
    /// False while the lesion still carries the default keep.
    pub decided: bool,
    /// Voxels of this lesion cleared by erase actions.
    pub erased_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionsResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub lesions: Vec<LesionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VhiResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub log_length: usize,
    pub vhi: VhiMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceLayer {
    Stir,
    T1w,
    Sensitive,
    Conservative,
    /// Lesion ids per pixel.
    Lesions,
}

impl std::str::FromStr for SliceLayer {
    type Err = ServiceError;

    fn from_str(s: &str) -> ServiceResult<Self> {
        Ok(match s {
            "stir" => SliceLayer::Stir,
            "t1w" => SliceLayer::T1w,
            "sensitive" => SliceLayer::Sensitive,
            "conservative" => SliceLayer::Conservative,
            "lesions" => SliceLayer::Lesions,
            other => return Err(ServiceError::BadRequest(format!("unknown layer {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceView {
    /// Masks as built, before any reader action.
    Candidate,
    /// Masks after the reader's decisions and erases so far.
    #[default]
    Cleaned,
}

impl std::str::FromStr for SliceView {
    type Err = ServiceError;

    fn from_str(s: &str) -> ServiceResult<Self> {
        match s {
            "candidate" => Ok(SliceView::Candidate),
            "cleaned" => Ok(SliceView::Cleaned),
            other => Err(ServiceError::BadRequest(format!("unknown view {other:?}"))),
        }
    }
}

/// One axial plane. Images carry raw row-major values (x fastest); masks
/// carry in-plane runs `[start, length]` over the same order; the lesion
/// layer carries one id per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePayload {
    pub format_version: u32,
    pub z: usize,
    pub layer: SliceLayer,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<SliceView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub lesion_id: u32,
    pub decision: Decision,
    #[serde(default)]
    pub reader_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraseRequest {
    pub voxels: Vec<usize>,
    pub reason: String,
    #[serde(default)]
    pub reader_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub session_id: String,
    pub log_length: usize,
    pub vhi: VhiMeasurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub lesion_count: usize,
    pub thresholds: ThresholdPair,
    pub vhi: VhiMeasurement,
    pub warnings: Vec<String>,
}

/// What `finalize` hands back: the report plus the files written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeBundle {
    pub session_id: String,
    pub status: SessionStatus,
    pub files: Vec<String>,
    pub log_length: usize,
    pub report: serde_json::Value,
}

/// Session state shared by the store and the HTTP layer.
pub struct Session {
    manifest: SessionManifest,
    candidate: CandidateSegmentation,
    entries: Vec<LogEntry>,
    live: LiveState,
    stir: crate::volume::Volume,
    t1w: Option<crate::volume::Volume>,
}

impl Session {
    fn new(
        manifest: SessionManifest,
        candidate: CandidateSegmentation,
        stir: crate::volume::Volume,
        t1w: Option<crate::volume::Volume>,
    ) -> Self {
        let live = LiveState::new(&candidate);
        Session {
            manifest,
            candidate,
            entries: Vec::new(),
            live,
            stir,
            t1w,
        }
    }

    pub fn id(&self) -> &str {
        &self.manifest.session_id
    }

    pub fn manifest(&self) -> &SessionManifest {
        &self.manifest
    }

    pub fn candidate(&self) -> &CandidateSegmentation {
        &self.candidate
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn live_vhi(&self) -> VhiMeasurement {
        self.live.vhi()
    }

    pub fn is_finalized(&self) -> bool {
        self.manifest.status == SessionStatus::Finalized
    }

    fn check_action(&self, action: &CleaningAction) -> ServiceResult<()> {
        validate_action(&self.candidate, action)?;
        Ok(())
    }

    /// Record an already validated and persisted entry in memory.
    fn record(&mut self, entry: LogEntry) {
        self.live.apply(&self.candidate, &entry.action);
        self.entries.push(entry);
    }

    pub fn lesions(&self) -> LesionsResponse {
        let lesions = self
            .candidate
            .lesions()
            .iter()
            .map(|l| {
                let i = l.id as usize - 1;
                let s = l.summary();
                LesionView {
                    id: l.id,
                    voxel_count: s.voxel_count,
                    conservative_voxel_count: self.candidate.conservative_count(l.id),
                    bbox: s.bbox,
                    slice_range: s.slice_range,
                    centroid: s.centroid,
                    decision: self.live.decisions[i],
                    decided: self.live.decided[i],
                    erased_voxels: l.voxel_count() - self.live.sensitive_left[i],
                }
            })
            .collect();
        LesionsResponse {
            session_id: self.manifest.session_id.clone(),
            status: self.manifest.status,
            lesions,
        }
    }

    pub fn vhi_response(&self) -> VhiResponse {
        VhiResponse {
            session_id: self.manifest.session_id.clone(),
            status: self.manifest.status,
            log_length: self.entries.len(),
            vhi: self.live.vhi(),
        }
    }

    /// Cleaned masks derived from the live state.
    pub fn live_masks(&self) -> (BinaryMask, BinaryMask) {
        let geometry = *self.candidate.sensitive().geometry();
        let mut sensitive = BinaryMask::empty(geometry);
        let mut conservative = BinaryMask::empty(geometry);
        for i in self.candidate.sensitive().true_indices() {
            if self.live.keeps_voxel(&self.candidate, i) {
                sensitive.set(i, true);
                if self.candidate.conservative().get(i) {
                    conservative.set(i, true);
                }
            }
        }
        (sensitive, conservative)
    }

    pub fn slice(&self, z: usize, layer: SliceLayer, view: SliceView) -> ServiceResult<SlicePayload> {
        let geometry = self.candidate.sensitive().geometry();
        let [nx, ny, nz] = geometry.dims();
        if z >= nz {
            return Err(ServiceError::BadRequest(format!("slice {z} out of range 0..{nz}")));
        }
        let plane = geometry.slice_len();
        let base = z * plane;
        let mut payload = SlicePayload {
            format_version: crate::FORMAT_VERSION,
            z,
            layer,
            width: nx,
            height: ny,
            view: None,
            values: None,
            encoding: None,
            runs: None,
            labels: None,
        };
        let keep = |i: usize| view == SliceView::Candidate || self.live.keeps_voxel(&self.candidate, i);
        match layer {
            SliceLayer::Stir => payload.values = Some(self.stir.slice(z).to_vec()),
            SliceLayer::T1w => {
                let t1w = self.t1w.as_ref().ok_or_else(|| {
                    ServiceError::Core(Error::invalid("session has no T1-weighted volume"))
                })?;
                payload.values = Some(t1w.slice(z).to_vec());
            }
            SliceLayer::Sensitive | SliceLayer::Conservative => {
                let mask = if layer == SliceLayer::Sensitive {
                    self.candidate.sensitive()
                } else {
                    self.candidate.conservative()
                };
                let bits: Vec<bool> = (base..base + plane).map(|i| mask.get(i) && keep(i)).collect();
                payload.view = Some(view);
                payload.encoding = Some("rle-row-major".to_owned());
                payload.runs = Some(crate::io::rle::encode_runs(&bits));
            }
            SliceLayer::Lesions => {
                let labels = (base..base + plane)
                    .map(|i| if keep(i) { self.candidate.label_at(i) } else { 0 })
                    .collect();
                payload.view = Some(view);
                payload.labels = Some(labels);
            }
        }
        Ok(payload)
    }
}

pub(crate) fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
