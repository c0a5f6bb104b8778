//! Run-length encoded binary masks (`rle-z-major`).
//!
//! Runs are `[start, length]` pairs over the z-major linear index, sorted,
//! non-overlapping and maximal (no two runs touch).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry};
use crate::FORMAT_VERSION;

pub const RLE_ENCODING: &str = "rle-z-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleMaskFile {
    pub format_version: u32,
    pub encoding: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub runs: Vec<[usize; 2]>,
}

/// Maximal runs of set entries in `bits`.
pub fn encode_runs(bits: &[bool]) -> Vec<[usize; 2]> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let start = i;
            while i < bits.len() && bits[i] {
                i += 1;
            }
            runs.push([start, i - start]);
        } else {
            i += 1;
        }
    }
    runs
}

/// Expand runs over `len` entries, rejecting anything that is not a valid
/// canonical run list.
pub fn decode_runs(runs: &[[usize; 2]], len: usize) -> Result<Vec<bool>> {
    let mut bits = vec![false; len];
    let mut prev_end: Option<usize> = None;
    for &[start, length] in runs {
        if length == 0 {
            return Err(Error::format("rle mask", format!("zero-length run at {start}")));
        }
        if let Some(end) = prev_end {
            if start < end {
                return Err(Error::format(
                    "rle mask",
                    format!("run at {start} overlaps or precedes the previous run ending at {end}"),
                ));
            }
            if start == end {
                return Err(Error::format(
                    "rle mask",
                    format!("run at {start} is adjacent to the previous run (runs must be maximal)"),
                ));
            }
        }
        let end = start
            .checked_add(length)
            .filter(|&e| e <= len)
            .ok_or_else(|| {
                Error::format(
                    "rle mask",
                    format!("run [{start}, {length}] exceeds {len} voxels"),
                )
            })?;
        bits[start..end].fill(true);
        prev_end = Some(end);
    }
    Ok(bits)
}

pub fn rle_encode(mask: &BinaryMask) -> RleMaskFile {
    let g = mask.geometry();
    RleMaskFile {
        format_version: FORMAT_VERSION,
        encoding: RLE_ENCODING.to_owned(),
        dims: g.dims(),
        spacing_mm: g.spacing_mm(),
        runs: encode_runs(mask.bits()),
    }
}

pub fn rle_decode(file: &RleMaskFile) -> Result<BinaryMask> {
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "rle mask format_version {}",
            file.format_version
        )));
    }
    if file.encoding != RLE_ENCODING {
        return Err(Error::Unsupported(format!("mask encoding {:?}", file.encoding)));
    }
    let geometry = Geometry::new(file.dims, file.spacing_mm)?;
    let bits = decode_runs(&file.runs, geometry.voxel_count())?;
    BinaryMask::new(geometry, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(dims: [usize; 3]) -> Geometry {
        Geometry::new(dims, [0.59, 0.59, 3.0]).unwrap()
    }

    #[test]
    fn encode_examples() {
        let geom = g([2, 2, 1]);
        let m = BinaryMask::from_indices(geom, [geom.index(0, 0, 0), geom.index(1, 0, 0)]).unwrap();
        assert_eq!(rle_encode(&m).runs, vec![[0, 2]]);
        assert!(rle_encode(&BinaryMask::empty(geom)).runs.is_empty());
        let full = g([3, 4, 5]);
        assert_eq!(rle_encode(&BinaryMask::full(full)).runs, vec![[0, 60]]);
    }

    #[test]
    fn decode_rejects_bad_runs() {
        assert!(decode_runs(&[[0, 3], [2, 2]], 10).is_err());
        assert!(decode_runs(&[[4, 1], [0, 1]], 10).is_err());
        assert!(decode_runs(&[[8, 3]], 10).is_err());
        assert!(decode_runs(&[[0, 2], [2, 2]], 10).is_err());
        assert!(decode_runs(&[[0, 0]], 10).is_err());
        assert!(decode_runs(&[[usize::MAX, 2]], 10).is_err());
        assert_eq!(decode_runs(&[[0, 2], [3, 1]], 4).unwrap(), vec![true, true, false, true]);
    }

    #[test]
    fn decode_rejects_foreign_encoding() {
        let mut f = rle_encode(&BinaryMask::empty(g([2, 2, 2])));
        f.encoding = "rle-x-major".into();
        assert!(matches!(rle_decode(&f), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn round_trip_and_canonical(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let geom = g([bits.len(), 1, 1]);
            let m = BinaryMask::new(geom, bits).unwrap();
            let f = rle_encode(&m);
            prop_assert_eq!(&rle_decode(&f).unwrap(), &m);
            for w in f.runs.windows(2) {
                prop_assert!(w[0][0] + w[0][1] < w[1][0]);
            }
            prop_assert_eq!(f.runs.iter().map(|r| r[1]).sum::<usize>(), m.count_true());
        }
    }
}
