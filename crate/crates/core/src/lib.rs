//! Semiautomated measurement of the volume of hyperintense inflammation
//! (V_HI) in STIR MRI.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`threshold`] derives a sensitive and a conservative intensity limit
//!    from a normal-bone region of interest.
//! 2. [`segment`] thresholds the disease region, drops tiny in-plane
//!    regions and labels 3D lesion candidates.
//! 3. A reader keeps or removes whole lesions, either offline through a
//!    decision log or interactively through the [`service`].
//! 4. [`segment::compute_vhi`] turns the cleaned masks into voxel counts
//!    and mm³ volumes.
//!
//! [`metrics`] holds the agreement statistics used to evaluate the
//! biomarker against manual segmentations and visual scores.

pub mod components;
pub mod error;
pub mod io;
pub mod metrics;
pub mod segment;
pub mod service;
pub mod threshold;
pub mod volume;

pub use components::{connected_components, Connectivity, LabelMode, Lesion};
pub use error::{Error, Result};
pub use segment::{
    apply_cleaning, build_candidate, compute_vhi, CandidateSegmentation, CleaningAction,
    CleaningDecisionLog, Decision, VhiMeasurement,
};
pub use threshold::{adapt_multiplier, compute_thresholds, normal_bone_stats, NormalBoneStats, ThresholdPair};
pub use volume::{mask_combine, mask_volume_mm3, BinaryMask, Geometry, MaskOp, Volume};

/// Tool version reported by the CLI and embedded in report provenance.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version of every JSON schema written by this crate.
pub const FORMAT_VERSION: u32 = 1;
