//! On-disk session registry.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use super::*;
use crate::io::report::{LesionsFile, Provenance, ThresholdReport, VhiReport};
use crate::io::{self, json, rle, Dtype};
use crate::segment::{apply_cleaning, build_candidate, compute_vhi, CleaningDecisionLog, DEFAULT_MIN_REGION_PIXELS};
use crate::threshold::compute_thresholds;
use crate::volume::Volume;
use crate::FORMAT_VERSION;

const LOCK_FILE: &str = ".vhi-service.lock";
const STAGING_PREFIX: &str = ".creating-";
const STIR_FILE: &str = "stir.json";
const T1W_FILE: &str = "t1w.json";

/// Where the thresholds of a new session come from when no normal-bone
/// mask is given: a `thresholds.json` path or the two limits inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSource {
    File(PathBuf),
    Inline { l_lower: f64, l_upper: f64 },
}

/// Body of `POST /sessions`. Paths are read by the server process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub stir: PathBuf,
    #[serde(default)]
    pub t1w: Option<PathBuf>,
    pub disease_mask: PathBuf,
    #[serde(default)]
    pub normal_mask: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Option<ThresholdSource>,
    pub reader_id: String,
    #[serde(default)]
    pub min_region_px: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    /// Accept voxel-subset erase actions.
    pub allow_erase: bool,
}

/// All sessions under one data dir. Each session has its own mutex, so
/// mutations of one session are serialized while different sessions
/// proceed in parallel. The data dir itself is guarded by an exclusive
/// lock file for the lifetime of the store.
pub struct SessionStore {
    data_dir: PathBuf,
    options: StoreOptions,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    _lock: File,
}

fn lock(session: &Mutex<Session>) -> MutexGuard<'_, Session> {
    // Sessions change only after the log append succeeded, so a panic
    // elsewhere cannot leave a half-applied action behind.
    session.lock().unwrap_or_else(|p| p.into_inner())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Core(Error::io(path, e))
}

impl SessionStore {
    /// Open (creating if needed) a data dir and replay every session in it.
    pub fn open(data_dir: impl Into<PathBuf>, options: StoreOptions) -> ServiceResult<Self> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir).map_err(io_err(&data_dir))?;
        let lock_path = data_dir.join(LOCK_FILE);
        let lock_file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock_file.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => {
                return Err(ServiceError::Locked(data_dir.display().to_string()))
            }
            Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }

        let mut sessions = HashMap::new();
        let mut dirs: Vec<_> = fs::read_dir(&data_dir)
            .map_err(io_err(&data_dir))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io_err(&data_dir))?;
        dirs.sort_by_key(|d| d.file_name());
        for entry in dirs {
            let name = entry.file_name().to_string_lossy().into_owned();
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            if name.starts_with(STAGING_PREFIX) {
                // Creation was interrupted before the session became visible.
                fs::remove_dir_all(&path).map_err(io_err(&path))?;
                continue;
            }
            if !path.join(MANIFEST_FILE).is_file() {
                continue;
            }
            let session = replay(&path)?;
            sessions.insert(session.id().to_owned(), Arc::new(Mutex::new(session)));
        }

        Ok(SessionStore {
            data_dir,
            options,
            sessions: RwLock::new(sessions),
            _lock: lock_file,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn options(&self) -> StoreOptions {
        self.options
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join(id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        let mut ids: Vec<_> = map.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        map.get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_owned()))
    }

    /// Run `f` on a consistent snapshot of one session.
    pub fn with_session<R>(&self, id: &str, f: impl FnOnce(&Session) -> R) -> ServiceResult<R> {
        let session = self.get(id)?;
        let guard = lock(&session);
        Ok(f(&guard))
    }

    pub fn create(&self, req: &CreateSessionRequest) -> ServiceResult<CreateSessionResponse> {
        if req.reader_id.trim().is_empty() {
            return Err(Error::invalid("reader_id must not be empty").into());
        }
        let min_region_pixels = req.min_region_px.unwrap_or(DEFAULT_MIN_REGION_PIXELS);

        let mut inputs = BTreeMap::new();
        let mut record = |role: &str, path: &Path| -> ServiceResult<()> {
            inputs.insert(
                role.to_owned(),
                InputRecord {
                    path: path.display().to_string(),
                    sha256: io::file_digest(path)?,
                },
            );
            Ok(())
        };

        let stir = io::load_volume(&req.stir)?;
        record("stir", &req.stir)?;
        let geometry = *stir.geometry();
        let t1w = match &req.t1w {
            Some(p) => {
                let v = io::load_volume(p)?;
                geometry.ensure_compatible(v.geometry(), "T1w vs STIR")?;
                record("t1w", p)?;
                Some(v)
            }
            None => None,
        };
        let disease = io::load_mask(&req.disease_mask)?;
        geometry.ensure_compatible(disease.geometry(), "disease mask vs STIR")?;
        record("disease_mask", &req.disease_mask)?;

        let (thresholds, threshold_stats) = match (&req.normal_mask, &req.thresholds) {
            (Some(p), None) => {
                let mask = io::load_mask(p)?;
                record("normal_mask", p)?;
                let est = compute_thresholds(&stir, &mask)?;
                (est.thresholds, Some(StatsReport::from(&est.stats)))
            }
            (None, Some(ThresholdSource::File(p))) => {
                let report: ThresholdReport = json::read_json(p, "thresholds")?;
                record("thresholds", p)?;
                (report.to_pair()?, report.stats)
            }
            (None, Some(ThresholdSource::Inline { l_lower, l_upper })) => {
                (ThresholdPair::fixed(*l_lower, *l_upper)?, None)
            }
            _ => {
                return Err(Error::invalid("give exactly one of normal_mask and thresholds").into());
            }
        };

        let candidate = build_candidate(&stir, &disease, &thresholds, min_region_pixels)?;
        let candidate_vhi = compute_vhi(candidate.sensitive(), candidate.conservative())?;
        let mut warnings = Vec::new();
        if thresholds.clamped {
            warnings.push(format!(
                "sensitive threshold clamped to the conservative threshold {}",
                thresholds.l_upper
            ));
        }
        if candidate.lesions().is_empty() {
            warnings.push("candidate segmentation contains no lesions".to_owned());
        }

        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let manifest = SessionManifest {
            format_version: FORMAT_VERSION,
            session_id: session_id.clone(),
            status: SessionStatus::Open,
            reader_id: req.reader_id.clone(),
            created_ms: now_ms(),
            inputs,
            thresholds,
            threshold_stats,
            min_region_pixels,
            lesion_count: candidate.lesions().len(),
            candidate_vhi,
            lesions_file: LESIONS_FILE.to_owned(),
            decision_log: DECISIONS_FILE.to_owned(),
            has_t1w: t1w.is_some(),
            warnings: warnings.clone(),
        };

        // Stage everything, then make the session visible with one rename.
        let staging = self.data_dir.join(format!("{STAGING_PREFIX}{session_id}"));
        let result = write_session_files(&staging, &manifest, &candidate, &stir, t1w.as_ref());
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        let dir = self.session_dir(&session_id);
        fs::rename(&staging, &dir).map_err(io_err(&dir))?;
        sync_dir(&self.data_dir)?;

        let response = CreateSessionResponse {
            session_id: session_id.clone(),
            lesion_count: manifest.lesion_count,
            thresholds,
            vhi: candidate_vhi,
            warnings,
        };
        let session = Session::new(manifest, candidate, stir, t1w);
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session_id, Arc::new(Mutex::new(session)));
        Ok(response)
    }

    pub fn lesions(&self, id: &str) -> ServiceResult<LesionsResponse> {
        self.with_session(id, Session::lesions)
    }

    pub fn vhi(&self, id: &str) -> ServiceResult<VhiResponse> {
        self.with_session(id, Session::vhi_response)
    }

    pub fn slice(&self, id: &str, z: usize, layer: SliceLayer, view: SliceView) -> ServiceResult<SlicePayload> {
        self.with_session(id, |s| s.slice(z, layer, view))?
    }

    fn act(&self, id: &str, reader_id: Option<&str>, action: CleaningAction) -> ServiceResult<ActionResponse> {
        let session = self.get(id)?;
        let mut s = lock(&session);
        if s.is_finalized() {
            return Err(ServiceError::Finalized(id.to_owned()));
        }
        s.check_action(&action)?;
        let entry = LogEntry {
            reader_id: reader_id.unwrap_or(&s.manifest.reader_id).to_owned(),
            timestamp_ms: now_ms(),
            action,
        };
        append_entry(&self.session_dir(id).join(DECISIONS_FILE), &entry)?;
        s.record(entry);
        Ok(ActionResponse {
            session_id: id.to_owned(),
            log_length: s.entries().len(),
            vhi: s.live_vhi(),
        })
    }

    pub fn decide(&self, id: &str, req: &DecisionRequest) -> ServiceResult<ActionResponse> {
        self.act(
            id,
            req.reader_id.as_deref(),
            CleaningAction::Decision {
                lesion_id: req.lesion_id,
                decision: req.decision,
            },
        )
    }

    pub fn erase(&self, id: &str, req: &EraseRequest) -> ServiceResult<ActionResponse> {
        if !self.options.allow_erase {
            // Still report unknown sessions as such.
            self.get(id)?;
            return Err(ServiceError::EraseDisabled);
        }
        self.act(
            id,
            req.reader_id.as_deref(),
            CleaningAction::Erase {
                voxels: req.voxels.clone(),
                reason: req.reason.clone(),
            },
        )
    }

    /// Write the cleaned masks and report, then mark the session finalized.
    /// Later calls return the stored bundle unchanged.
    pub fn finalize(&self, id: &str) -> ServiceResult<FinalizeBundle> {
        let session = self.get(id)?;
        let mut s = lock(&session);
        let dir = self.session_dir(id);
        if !s.is_finalized() {
            let log = CleaningDecisionLog::from_entries(s.entries().to_vec());
            let (sensitive, conservative) = apply_cleaning(s.candidate(), &log)?;
            let measurement = compute_vhi(&sensitive, &conservative)?;
            debug_assert_eq!(measurement, s.live_vhi());
            let report = VhiReport::new(
                measurement,
                Some(s.manifest.thresholds),
                Provenance::current(s.manifest.min_region_pixels),
            );
            io::save_mask(&dir.join(FINAL_SENSITIVE_FILE), &sensitive)?;
            io::save_mask(&dir.join(FINAL_CONSERVATIVE_FILE), &conservative)?;
            json::write_json(&dir.join(VHI_REPORT_FILE), &report)?;
            let mut manifest = s.manifest.clone();
            manifest.status = SessionStatus::Finalized;
            // The manifest rewrite is the commit point.
            json::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            s.manifest = manifest;
        }
        finalized_bundle(&dir, &s)
    }
}

fn finalized_bundle(dir: &Path, s: &Session) -> ServiceResult<FinalizeBundle> {
    let report: serde_json::Value = json::read_json(&dir.join(VHI_REPORT_FILE), "vhi report")?;
    Ok(FinalizeBundle {
        session_id: s.id().to_owned(),
        status: s.manifest.status,
        files: [
            FINAL_SENSITIVE_FILE,
            FINAL_CONSERVATIVE_FILE,
            VHI_REPORT_FILE,
            DECISIONS_FILE,
        ]
        .map(str::to_owned)
        .to_vec(),
        log_length: s.entries().len(),
        report,
    })
}

fn sync_dir(dir: &Path) -> ServiceResult<()> {
    // Directory fsync makes renames durable; not every platform allows
    // opening a directory, so failure to open is not fatal.
    if let Ok(f) = File::open(dir) {
        f.sync_all().map_err(io_err(dir))?;
    }
    Ok(())
}

fn write_session_files(
    dir: &Path,
    manifest: &SessionManifest,
    candidate: &CandidateSegmentation,
    stir: &Volume,
    t1w: Option<&Volume>,
) -> ServiceResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    io::raw::write(&dir.join(STIR_FILE), stir, Dtype::Float64)?;
    if let Some(t1w) = t1w {
        io::raw::write(&dir.join(T1W_FILE), t1w, Dtype::Float64)?;
    }
    io::save_mask(&dir.join(CANDIDATE_SENSITIVE_FILE), candidate.sensitive())?;
    io::save_mask(&dir.join(CANDIDATE_CONSERVATIVE_FILE), candidate.conservative())?;
    json::write_json(
        &dir.join(LESIONS_FILE),
        &LesionsFile::new(candidate.lesions().iter().map(|l| l.summary())),
    )?;
    let log_path = dir.join(DECISIONS_FILE);
    File::create(&log_path)
        .and_then(|f| f.sync_all())
        .map_err(io_err(&log_path))?;
    json::write_json(&dir.join(MANIFEST_FILE), manifest)?;
    sync_dir(dir)
}

fn append_entry(path: &Path, entry: &LogEntry) -> ServiceResult<()> {
    let mut line = serde_json::to_vec(entry).map_err(|e| Error::format("decision log", e.to_string()))?;
    line.push(b'\n');
    let mut f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    f.write_all(&line).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

/// Decision-log entries. A final line without its newline is what a crash
/// in the middle of an append leaves behind; it was never acknowledged, so
/// it is dropped and the file trimmed back to the last complete entry.
fn read_log(path: &Path) -> ServiceResult<Vec<LogEntry>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    bytes[..complete]
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(n, line)| {
            serde_json::from_slice(line).map_err(|e| {
                ServiceError::Core(Error::format(
                    "decision log",
                    format!("{} line {}: {e}", path.display(), n + 1),
                ))
            })
        })
        .collect()
}

/// Rebuild a session from its directory.
fn replay(dir: &Path) -> ServiceResult<Session> {
    let manifest: SessionManifest = json::read_json(&dir.join(MANIFEST_FILE), "session manifest")?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!("session manifest format_version {}", manifest.format_version)).into());
    }
    let stir = io::raw::read(&dir.join(STIR_FILE))?;
    let t1w = if manifest.has_t1w {
        Some(io::raw::read(&dir.join(T1W_FILE))?)
    } else {
        None
    };
    let sensitive: rle::RleMaskFile = json::read_json(&dir.join(CANDIDATE_SENSITIVE_FILE), "rle mask")?;
    let conservative: rle::RleMaskFile = json::read_json(&dir.join(CANDIDATE_CONSERVATIVE_FILE), "rle mask")?;
    let candidate = CandidateSegmentation::from_masks(
        rle::rle_decode(&sensitive)?,
        rle::rle_decode(&conservative)?,
        manifest.thresholds,
    )?;
    if candidate.lesions().len() != manifest.lesion_count {
        return Err(Error::format(
            "session",
            format!(
                "{}: {} lesions in stored masks, manifest says {}",
                dir.display(),
                candidate.lesions().len(),
                manifest.lesion_count
            ),
        )
        .into());
    }
    let entries = read_log(&dir.join(&manifest.decision_log))?;
    let mut session = Session::new(manifest, candidate, stir, t1w);
    for entry in entries {
        session.check_action(&entry.action)?;
        session.record(entry);
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn truncated_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DECISIONS_FILE);
        let entry = LogEntry {
            reader_id: "r".into(),
            timestamp_ms: 1,
            action: CleaningAction::Decision {
                lesion_id: 1,
                decision: Decision::Remove,
            },
        };
        let mut bytes = serde_json::to_vec(&entry).unwrap();
        bytes.extend_from_slice(b"\n{\"reader_id\":\"r\",\"timest");
        fs::write(&path, &bytes).unwrap();
        assert_eq!(read_log(&path).unwrap(), vec![entry]);
        assert!(fs::read(&path).unwrap().ends_with(b"\n"));
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DECISIONS_FILE);
        fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(read_log(&path), Err(ServiceError::Core(Error::Format { .. }))));
    }

    #[test]
    fn data_dir_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let _first = SessionStore::open(dir.path(), StoreOptions::default()).unwrap();
        assert!(matches!(
            SessionStore::open(dir.path(), StoreOptions::default()),
            Err(ServiceError::Locked(_))
        ));
    }

    #[test]
    fn create_requires_one_threshold_source() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([4, 4, 2], [1.0; 3]).unwrap();
        let stir = dir.path().join("stir.json");
        io::save_volume(&stir, &Volume::filled(g, 1.0).unwrap(), Dtype::Float32).unwrap();
        let mask = dir.path().join("d.rle.json");
        io::save_mask(&mask, &BinaryMask::full(g)).unwrap();
        let store = SessionStore::open(dir.path().join("data"), StoreOptions::default()).unwrap();
        let req = CreateSessionRequest {
            stir,
            t1w: None,
            disease_mask: mask.clone(),
            normal_mask: None,
            thresholds: None,
            reader_id: "r".into(),
            min_region_px: None,
        };
        let err = store.create(&req).unwrap_err();
        assert_eq!(err.status(), 422);
        let both = CreateSessionRequest {
            normal_mask: Some(mask),
            thresholds: Some(ThresholdSource::Inline { l_lower: 1.0, l_upper: 2.0 }),
            ..req
        };
        assert_eq!(store.create(&both).unwrap_err().status(), 422);
        assert!(store.session_ids().is_empty());
    }
}
