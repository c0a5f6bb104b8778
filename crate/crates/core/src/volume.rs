//! Voxel grids: geometry, scalar volumes and binary masks.
//!
//! Every grid is stored in z-major linear order with x varying fastest:
//! `index = x + y * nx + z * nx * ny`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance when comparing voxel spacings of two grids. NIfTI
/// stores spacing as f32, so grids read from different formats may differ
/// in the last few bits.
const SPACING_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be >= 1, got {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::invalid(format!("dims {dims:?} overflow voxel count")));
        }
        if spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::invalid(format!(
                "spacing must be finite and > 0, got {spacing_mm:?}"
            )));
        }
        Ok(Geometry { dims, spacing_mm })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Same dims and (to within f32 round-off) the same spacing.
    pub fn is_compatible(&self, other: &Geometry) -> bool {
        self.dims == other.dims
            && self
                .spacing_mm
                .iter()
                .zip(other.spacing_mm.iter())
                .all(|(a, b)| (a - b).abs() <= SPACING_RTOL * a.abs().max(b.abs()))
    }

    pub fn ensure_compatible(&self, other: &Geometry, context: &str) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{context}: dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing_mm, other.dims, other.spacing_mm
            )))
        }
    }
}

/// Scalar image (STIR or T1w) on a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    values: Vec<f64>,
}

impl Volume {
    /// Rejects a value count that does not match the geometry and any
    /// non-finite value.
    pub fn new(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.voxel_count() {
            return Err(Error::invalid(format!(
                "volume has {} values but geometry {:?} needs {}",
                values.len(),
                geometry.dims(),
                geometry.voxel_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Volume { geometry, values })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Result<Self> {
        Volume::new(geometry, vec![value; geometry.voxel_count()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.geometry.index(x, y, z)]
    }

    /// Set a voxel. Non-finite values are rejected.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid("non-finite intensity"));
        }
        let i = self.geometry.index(x, y, z);
        self.values[i] = value;
        Ok(())
    }

    /// Row-major (x fastest) copy of plane `z`.
    pub fn slice(&self, z: usize) -> &[f64] {
        let len = self.geometry.slice_len();
        &self.values[z * len..(z + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    geometry: Geometry,
    bits: Vec<bool>,
}

// Spacings are validated finite, so equality is reflexive.
impl Eq for Geometry {}

impl BinaryMask {
    pub fn new(geometry: Geometry, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != geometry.voxel_count() {
            return Err(Error::invalid(format!(
                "mask has {} voxels but geometry {:?} needs {}",
                bits.len(),
                geometry.dims(),
                geometry.voxel_count()
            )));
        }
        Ok(BinaryMask { geometry, bits })
    }

    pub fn empty(geometry: Geometry) -> Self {
        BinaryMask {
            geometry,
            bits: vec![false; geometry.voxel_count()],
        }
    }

    pub fn full(geometry: Geometry) -> Self {
        BinaryMask {
            geometry,
            bits: vec![true; geometry.voxel_count()],
        }
    }

    /// Mask with exactly the given linear indices set.
    pub fn from_indices(geometry: Geometry, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = BinaryMask::empty(geometry);
        for i in indices {
            if i >= mask.bits.len() {
                return Err(Error::invalid(format!(
                    "voxel index {i} outside grid of {} voxels",
                    mask.bits.len()
                )));
            }
            mask.bits[i] = true;
        }
        Ok(mask)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn get_xyz(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.geometry.index(x, y, z)]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn set_xyz(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.geometry.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn true_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// True when every voxel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn slice(&self, z: usize) -> &[bool] {
        let len = self.geometry.slice_len();
        &self.bits[z * len..(z + 1) * len]
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOp {
    And,
    Or,
    /// Voxels of the first mask that are not in the second.
    Minus,
}

pub fn mask_combine(a: &BinaryMask, b: &BinaryMask, op: MaskOp) -> Result<BinaryMask> {
    a.geometry.ensure_compatible(&b.geometry, "mask_combine")?;
    let f: fn(bool, bool) -> bool = match op {
        MaskOp::And => |x, y| x && y,
        MaskOp::Or => |x, y| x || y,
        MaskOp::Minus => |x, y| x && !y,
    };
    let bits = a.bits.iter().zip(&b.bits).map(|(&x, &y)| f(x, y)).collect();
    Ok(BinaryMask {
        geometry: a.geometry,
        bits,
    })
}

/// Set-voxel count times the volume of one voxel.
pub fn mask_volume_mm3(mask: &BinaryMask) -> f64 {
    mask.count_true() as f64 * mask.geometry.voxel_volume_mm3()
}
