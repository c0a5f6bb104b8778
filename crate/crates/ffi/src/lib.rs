//! C ABI over `vhi-core`.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`VhiStatus`] and writes its result
//!   through an out-pointer. On failure the out-pointer is left untouched
//!   and [`vhi_last_error_message`] describes the error.
//! * Objects are opaque handles created by `*_load`/`*_from_data`/`*_build`
//!   functions and released with the matching `*_free`. Passing NULL to a
//!   `*_free` function is a no-op.
//! * Panics never cross the boundary; they are reported as
//!   [`VhiStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use vhi_core::segment::{CleaningAction, LogEntry};
use vhi_core::{
    adapt_multiplier, apply_cleaning, build_candidate, compute_thresholds, compute_vhi, metrics, BinaryMask,
    CandidateSegmentation, CleaningDecisionLog, Decision, Error, Geometry, NormalBoneStats, ThresholdPair, Volume,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VhiStatus {
    Ok = 0,
    /// NULL pointer, bad UTF-8, or a size that does not match.
    InvalidArgument = 1,
    /// Input rejected by the pipeline (malformed file, inconsistent data).
    Validation = 2,
    Io = 3,
    GeometryMismatch = 4,
    /// Unknown lesion id.
    NotFound = 5,
    /// Internal panic; the library state is unchanged.
    Panic = 6,
}

/// A 3D intensity volume.
pub struct VhiVolume(Volume);

/// A binary mask on a voxel grid.
pub struct VhiMask(BinaryMask);

/// A candidate segmentation: both tiers plus labeled lesions.
pub struct VhiCandidate(CandidateSegmentation);

/// Intensity limits. `l_lower` is the sensitive limit, `l_upper` the
/// conservative one.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhiThresholds {
    pub l_lower: f64,
    pub l_upper: f64,
    pub n: f64,
    pub clamped: bool,
    pub iterations: u64,
}

/// V_HI of both tiers.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhiMeasurement {
    pub voxel_count_sensitive: u64,
    pub volume_mm3_sensitive: f64,
    pub voxel_count_conservative: u64,
    pub volume_mm3_conservative: f64,
}

/// One candidate lesion. Bounding boxes are inclusive voxel coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhiLesionInfo {
    pub id: u32,
    pub voxel_count: u64,
    pub conservative_voxel_count: u64,
    pub bbox_min: [u64; 3],
    pub bbox_max: [u64; 3],
    pub centroid: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(VhiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => VhiStatus::Io,
            Error::GeometryMismatch(_) => VhiStatus::GeometryMismatch,
            Error::UnknownLesion(_) => VhiStatus::NotFound,
            _ => VhiStatus::Validation,
        };
        let mut msg = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            source = s.source();
        }
        Failure(status, msg)
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(VhiStatus::InvalidArgument, msg.to_owned())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VhiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VhiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_last_error(&format!("panic: {msg}"));
            VhiStatus::Panic
        }
    }
}

unsafe fn arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is NULL")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(&format!("{name} is NULL")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(invalid("path is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn geometry_arg(dims: *const usize, spacing_mm: *const f64) -> Result<Geometry, Failure> {
    let dims = slice_arg(dims, 3, "dims")?;
    let spacing = slice_arg(spacing_mm, 3, "spacing_mm")?;
    Ok(Geometry::new(
        [dims[0], dims[1], dims[2]],
        [spacing[0], spacing[1], spacing[2]],
    )?)
}

fn to_c_thresholds(t: &ThresholdPair) -> VhiThresholds {
    VhiThresholds {
        l_lower: t.l_lower,
        l_upper: t.l_upper,
        n: t.n,
        clamped: t.clamped,
        iterations: t.iterations,
    }
}

fn from_c_thresholds(t: &VhiThresholds) -> Result<ThresholdPair, Failure> {
    let mut pair = ThresholdPair::fixed(t.l_lower, t.l_upper)?;
    pair.n = t.n;
    pair.clamped = t.clamped;
    pair.iterations = t.iterations;
    Ok(pair)
}

/// Message describing why the most recent call on this thread failed, or
/// an empty string if it succeeded. The pointer stays valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn vhi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vhi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a volume from a `.nii` file or a raw `.json` sidecar header.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_volume` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_volume_load(path: *const c_char, out_volume: *mut *mut VhiVolume) -> VhiStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_volume, "out_volume")?;
        let v = vhi_core::io::load_volume(&path)?;
        *slot = Box::into_raw(Box::new(VhiVolume(v)));
        Ok(())
    })
}

/// Build a volume from `len` z-major values (`x` fastest).
///
/// # Safety
/// `dims` and `spacing_mm` point to 3 elements, `values` to `len`.
#[no_mangle]
pub unsafe extern "C" fn vhi_volume_from_data(
    dims: *const usize,
    spacing_mm: *const f64,
    values: *const f64,
    len: usize,
    out_volume: *mut *mut VhiVolume,
) -> VhiStatus {
    guard(|| {
        let geometry = geometry_arg(dims, spacing_mm)?;
        let values = slice_arg(values, len, "values")?;
        let slot = out(out_volume, "out_volume")?;
        if len != geometry.voxel_count() {
            return Err(invalid(&format!(
                "{len} values for a grid of {} voxels",
                geometry.voxel_count()
            )));
        }
        let v = Volume::new(geometry, values.to_vec())?;
        *slot = Box::into_raw(Box::new(VhiVolume(v)));
        Ok(())
    })
}

/// Grid dimensions of a volume.
///
/// # Safety
/// `volume` is a live handle; `out_dims` points to 3 writable elements.
#[no_mangle]
pub unsafe extern "C" fn vhi_volume_dims(volume: *const VhiVolume, out_dims: *mut usize) -> VhiStatus {
    guard(|| {
        let v = arg(volume, "volume")?;
        if out_dims.is_null() {
            return Err(invalid("out_dims is NULL"));
        }
        let dims = v.0.geometry().dims();
        std::ptr::copy_nonoverlapping(dims.as_ptr(), out_dims, 3);
        Ok(())
    })
}

/// # Safety
/// `volume` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vhi_volume_free(volume: *mut VhiVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Load a mask from RLE-JSON or NIfTI (nonzero = set).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_mask` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_mask_load(path: *const c_char, out_mask: *mut *mut VhiMask) -> VhiStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_mask, "out_mask")?;
        let m = vhi_core::io::load_mask(&path)?;
        *slot = Box::into_raw(Box::new(VhiMask(m)));
        Ok(())
    })
}

/// Build a mask from `len` z-major bytes; nonzero means set.
///
/// # Safety
/// `dims` and `spacing_mm` point to 3 elements, `bits` to `len`.
#[no_mangle]
pub unsafe extern "C" fn vhi_mask_from_data(
    dims: *const usize,
    spacing_mm: *const f64,
    bits: *const u8,
    len: usize,
    out_mask: *mut *mut VhiMask,
) -> VhiStatus {
    guard(|| {
        let geometry = geometry_arg(dims, spacing_mm)?;
        let bits = slice_arg(bits, len, "bits")?;
        let slot = out(out_mask, "out_mask")?;
        if len != geometry.voxel_count() {
            return Err(invalid(&format!(
                "{len} bytes for a grid of {} voxels",
                geometry.voxel_count()
            )));
        }
        let m = BinaryMask::new(geometry, bits.iter().map(|&b| b != 0).collect())?;
        *slot = Box::into_raw(Box::new(VhiMask(m)));
        Ok(())
    })
}

/// Save a mask as RLE-JSON, or as NIfTI when the path ends in `.nii`.
///
/// # Safety
/// `mask` is a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vhi_mask_save(mask: *const VhiMask, path: *const c_char) -> VhiStatus {
    guard(|| {
        let m = arg(mask, "mask")?;
        let path = path_arg(path)?;
        vhi_core::io::save_mask(&path, &m.0)?;
        Ok(())
    })
}

/// Number of set voxels.
///
/// # Safety
/// `mask` is a live handle; `out_count` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_mask_count(mask: *const VhiMask, out_count: *mut u64) -> VhiStatus {
    guard(|| {
        let m = arg(mask, "mask")?;
        *out(out_count, "out_count")? = m.0.count_true() as u64;
        Ok(())
    })
}

/// # Safety
/// `mask` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vhi_mask_free(mask: *mut VhiMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Thresholds from the STIR intensities inside a normal-bone mask.
///
/// # Safety
/// `stir` and `normal_mask` are live handles; `out_thresholds` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_compute_thresholds(
    stir: *const VhiVolume,
    normal_mask: *const VhiMask,
    out_thresholds: *mut VhiThresholds,
) -> VhiStatus {
    guard(|| {
        let stir = arg(stir, "stir")?;
        let mask = arg(normal_mask, "normal_mask")?;
        let slot = out(out_thresholds, "out_thresholds")?;
        let est = compute_thresholds(&stir.0, &mask.0)?;
        *slot = to_c_thresholds(&est.thresholds);
        Ok(())
    })
}

/// Thresholds from known quartiles and maximum of the normal-bone
/// intensities.
///
/// # Safety
/// `out_thresholds` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_thresholds_from_quartiles(
    q_lower: f64,
    q_upper: f64,
    i_max: f64,
    out_thresholds: *mut VhiThresholds,
) -> VhiStatus {
    guard(|| {
        let slot = out(out_thresholds, "out_thresholds")?;
        let stats = NormalBoneStats::from_summary(0, q_lower, q_upper, i_max)?;
        *slot = to_c_thresholds(&adapt_multiplier(&stats));
        Ok(())
    })
}

/// Threshold the disease region, drop in-plane regions smaller than
/// `min_region_px`, and label lesions.
///
/// # Safety
/// Handles are live; `thresholds` is readable; `out_candidate` writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_build(
    stir: *const VhiVolume,
    disease_mask: *const VhiMask,
    thresholds: *const VhiThresholds,
    min_region_px: usize,
    out_candidate: *mut *mut VhiCandidate,
) -> VhiStatus {
    guard(|| {
        let stir = arg(stir, "stir")?;
        let disease = arg(disease_mask, "disease_mask")?;
        let pair = from_c_thresholds(arg(thresholds, "thresholds")?)?;
        let slot = out(out_candidate, "out_candidate")?;
        let cand = build_candidate(&stir.0, &disease.0, &pair, min_region_px)?;
        *slot = Box::into_raw(Box::new(VhiCandidate(cand)));
        Ok(())
    })
}

/// Number of lesions; ids run from 1 to this count.
///
/// # Safety
/// `candidate` is a live handle; `out_count` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_lesion_count(candidate: *const VhiCandidate, out_count: *mut u32) -> VhiStatus {
    guard(|| {
        let c = arg(candidate, "candidate")?;
        *out(out_count, "out_count")? = c.0.lesions().len() as u32;
        Ok(())
    })
}

/// Summary of lesion `lesion_id`.
///
/// # Safety
/// `candidate` is a live handle; `out_info` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_lesion_info(
    candidate: *const VhiCandidate,
    lesion_id: u32,
    out_info: *mut VhiLesionInfo,
) -> VhiStatus {
    guard(|| {
        let c = arg(candidate, "candidate")?;
        let slot = out(out_info, "out_info")?;
        let l = c.0.lesion(lesion_id).ok_or(Error::UnknownLesion(lesion_id))?;
        *slot = VhiLesionInfo {
            id: l.id,
            voxel_count: l.voxel_count() as u64,
            conservative_voxel_count: c.0.conservative_count(l.id) as u64,
            bbox_min: l.bbox.map(|b| b[0] as u64),
            bbox_max: l.bbox.map(|b| b[1] as u64),
            centroid: l.centroid,
        };
        Ok(())
    })
}

/// V_HI after removing the listed lesions (all others are kept).
///
/// # Safety
/// `candidate` is a live handle; `removed_ids` points to `n_removed`
/// elements (may be NULL when zero); `out_measurement` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_measure(
    candidate: *const VhiCandidate,
    removed_ids: *const u32,
    n_removed: usize,
    out_measurement: *mut VhiMeasurement,
) -> VhiStatus {
    guard(|| {
        let c = arg(candidate, "candidate")?;
        let removed = slice_arg(removed_ids, n_removed, "removed_ids")?;
        let slot = out(out_measurement, "out_measurement")?;
        let log = CleaningDecisionLog::from_entries(
            removed
                .iter()
                .map(|&id| LogEntry {
                    reader_id: "ffi".to_owned(),
                    timestamp_ms: 0,
                    action: CleaningAction::Decision {
                        lesion_id: id,
                        decision: Decision::Remove,
                    },
                })
                .collect(),
        );
        let (s, k) = apply_cleaning(&c.0, &log)?;
        let m = compute_vhi(&s, &k)?;
        *slot = VhiMeasurement {
            voxel_count_sensitive: m.voxel_count_sensitive as u64,
            volume_mm3_sensitive: m.volume_mm3_sensitive,
            voxel_count_conservative: m.voxel_count_conservative as u64,
            volume_mm3_conservative: m.volume_mm3_conservative,
        };
        Ok(())
    })
}

/// Copy of the sensitive (`conservative == false`) or conservative tier.
///
/// # Safety
/// `candidate` is a live handle; `out_mask` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_mask(
    candidate: *const VhiCandidate,
    conservative: bool,
    out_mask: *mut *mut VhiMask,
) -> VhiStatus {
    guard(|| {
        let c = arg(candidate, "candidate")?;
        let slot = out(out_mask, "out_mask")?;
        let m = if conservative { c.0.conservative() } else { c.0.sensitive() };
        *slot = Box::into_raw(Box::new(VhiMask(m.clone())));
        Ok(())
    })
}

/// # Safety
/// `candidate` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vhi_candidate_free(candidate: *mut VhiCandidate) {
    if !candidate.is_null() {
        drop(Box::from_raw(candidate));
    }
}

/// Dice coefficient of two masks (1.0 when both are empty).
///
/// # Safety
/// `a` and `b` are live handles; `out_dice` is writable.
#[no_mangle]
pub unsafe extern "C" fn vhi_dice(a: *const VhiMask, b: *const VhiMask, out_dice: *mut f64) -> VhiStatus {
    guard(|| {
        let a = arg(a, "a")?;
        let b = arg(b, "b")?;
        let slot = out(out_dice, "out_dice")?;
        *slot = metrics::dice(&a.0, &b.0)?.dice;
        Ok(())
    })
}
