//! Connected-component labeling of binary masks, per plane or in 3D.

use serde::{Deserialize, Serialize};

use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Face neighbours only (4-connected within a plane).
    Face6,
    /// Face, edge and corner neighbours (8-connected within a plane).
    Full26,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Each z-plane is labeled independently.
    PerSlice2d,
    Volume3d,
}

/// One connected component of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub id: u32,
    /// Linear indices, ascending.
    pub voxel_indices: Vec<usize>,
    /// Inclusive `[min, max]` per axis.
    pub bbox: [[usize; 2]; 3],
    pub centroid: [f64; 3],
}

impl Lesion {
    pub fn voxel_count(&self) -> usize {
        self.voxel_indices.len()
    }

    /// Inclusive `(z_min, z_max)`.
    pub fn slice_range(&self) -> (usize, usize) {
        (self.bbox[2][0], self.bbox[2][1])
    }

    pub fn summary(&self) -> LesionSummary {
        LesionSummary {
            id: self.id,
            voxel_count: self.voxel_count(),
            bbox: self.bbox,
            slice_range: [self.bbox[2][0], self.bbox[2][1]],
            centroid: self.centroid,
        }
    }
}

/// Serializable view of a [`Lesion`] without its voxel list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSummary {
    pub id: u32,
    pub voxel_count: usize,
    pub bbox: [[usize; 2]; 3],
    pub slice_range: [usize; 2],
    pub centroid: [f64; 3],
}

fn neighbour_offsets(connectivity: Connectivity, mode: LabelMode) -> Vec<[isize; 3]> {
    let dz_range: &[isize] = match mode {
        LabelMode::PerSlice2d => &[0],
        LabelMode::Volume3d => &[-1, 0, 1],
    };
    let mut offsets = Vec::with_capacity(26);
    for &dz in dz_range {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match connectivity {
                    Connectivity::Face6 => manhattan == 1,
                    Connectivity::Full26 => manhattan > 0,
                };
                if keep {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    offsets
}

/// Per-voxel component labels (0 = background) and the number of
/// components. Labels are `1..=K` in ascending order of each component's
/// smallest linear index.
pub fn label_components(
    mask: &BinaryMask,
    connectivity: Connectivity,
    mode: LabelMode,
) -> (Vec<u32>, u32) {
    let geometry = *mask.geometry();
    let [nx, ny, nz] = geometry.dims();
    let offsets = neighbour_offsets(connectivity, mode);
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();

    for seed in 0..bits.len() {
        if !bits[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let [x, y, z] = geometry.coords(i);
            for &[dx, dy, dz] in &offsets {
                let (Some(xn), Some(yn), Some(zn)) = (
                    x.checked_add_signed(dx).filter(|&v| v < nx),
                    y.checked_add_signed(dy).filter(|&v| v < ny),
                    z.checked_add_signed(dz).filter(|&v| v < nz),
                ) else {
                    continue;
                };
                let j = geometry.index(xn, yn, zn);
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next)
}

/// Lesions from a label image produced by [`label_components`].
pub fn lesions_from_labels(mask: &BinaryMask, labels: &[u32], count: u32) -> Vec<Lesion> {
    let geometry = mask.geometry();
    let mut lesions: Vec<Lesion> = (1..=count)
        .map(|id| Lesion {
            id,
            voxel_indices: Vec::new(),
            bbox: [[usize::MAX, 0]; 3],
            centroid: [0.0; 3],
        })
        .collect();
    // Scanning in linear order keeps every voxel list sorted.
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let lesion = &mut lesions[label as usize - 1];
        lesion.voxel_indices.push(i);
        let c = geometry.coords(i);
        for axis in 0..3 {
            lesion.bbox[axis][0] = lesion.bbox[axis][0].min(c[axis]);
            lesion.bbox[axis][1] = lesion.bbox[axis][1].max(c[axis]);
            lesion.centroid[axis] += c[axis] as f64;
        }
    }
    for lesion in &mut lesions {
        let n = lesion.voxel_indices.len() as f64;
        for c in &mut lesion.centroid {
            *c /= n;
        }
    }
    lesions
}

/// Partition the set voxels of `mask` into connected lesions.
///
/// Ids run `1..=K`, ordered by each lesion's smallest linear index. In
/// [`LabelMode::PerSlice2d`] the neighbourhood is restricted to the plane,
/// so [`Connectivity::Face6`] becomes 4-connectivity and
/// [`Connectivity::Full26`] becomes 8-connectivity.
pub fn connected_components(
    mask: &BinaryMask,
    connectivity: Connectivity,
    mode: LabelMode,
) -> Vec<Lesion> {
    let (labels, count) = label_components(mask, connectivity, mode);
    lesions_from_labels(mask, &labels, count)
}
