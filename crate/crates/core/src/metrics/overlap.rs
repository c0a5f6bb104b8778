//! Overlap between binary segmentations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json::sig9;
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceResult {
    #[serde(serialize_with = "sig9")]
    pub dice: f64,
    pub intersection: usize,
    pub count_a: usize,
    pub count_b: usize,
    /// Both masks were empty; `dice` is reported as 1.0.
    pub degenerate: bool,
}

/// `2|A∩B| / (|A| + |B|)`. Two empty masks agree perfectly (1.0, flagged
/// degenerate).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<DiceResult> {
    a.geometry().ensure_compatible(b.geometry(), "dice")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    let degenerate = na + nb == 0;
    let dice = if degenerate {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    };
    Ok(DiceResult {
        dice,
        intersection: inter,
        count_a: na,
        count_b: nb,
        degenerate,
    })
}

/// Majority-vote reference: a voxel is set when at least `min_votes` of
/// the input masks set it.
pub fn composite_reference(masks: &[BinaryMask], min_votes: usize) -> Result<BinaryMask> {
    if masks.len() < 2 {
        return Err(Error::invalid(format!(
            "composite reference needs at least 2 masks, got {}",
            masks.len()
        )));
    }
    if min_votes == 0 || min_votes > masks.len() {
        return Err(Error::invalid(format!(
            "min_votes must be in 1..={}, got {min_votes}",
            masks.len()
        )));
    }
    let first = masks[0].geometry();
    for (i, m) in masks.iter().enumerate().skip(1) {
        first.ensure_compatible(m.geometry(), &format!("composite reference mask {i}"))?;
    }
    let mut votes = vec![0usize; first.voxel_count()];
    for m in masks {
        for (v, &b) in votes.iter_mut().zip(m.bits()) {
            *v += b as usize;
        }
    }
    BinaryMask::new(*first, votes.into_iter().map(|v| v >= min_votes).collect())
}
