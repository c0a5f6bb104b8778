//! File formats: NIfTI-1 and raw-sidecar volumes, RLE-JSON masks, and the
//! JSON reports written by the CLI and the cleaning service.

pub mod json;
pub mod nifti;
pub mod raw;
pub mod report;
pub mod rle;

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};

pub use rle::{rle_decode, rle_encode, RleMaskFile};

/// On-disk voxel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Uint8 => 1,
            Dtype::Int16 => 2,
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uint8" => Ok(Dtype::Uint8),
            "int16" => Ok(Dtype::Int16),
            "float32" => Ok(Dtype::Float32),
            "float64" => Ok(Dtype::Float64),
            other => Err(Error::Unsupported(format!("dtype {other:?}"))),
        }
    }
}

pub(crate) fn decode_le(bytes: &[u8], dtype: Dtype, n: usize) -> Result<Vec<f64>> {
    if bytes.len() != n * dtype.size() {
        return Err(Error::format(
            "voxel payload",
            format!("{} bytes for {n} {dtype:?} voxels", bytes.len()),
        ));
    }
    Ok(match dtype {
        Dtype::Uint8 => bytes.iter().map(|&b| b as f64).collect(),
        Dtype::Int16 => bytes.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        Dtype::Float32 => bytes.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect(),
        Dtype::Float64 => bytes.chunks_exact(8).map(LittleEndian::read_f64).collect(),
    })
}

/// Encode values, refusing any that the target type cannot hold exactly.
pub(crate) fn encode_le(values: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = vec![0u8; values.len() * dtype.size()];
    let lossy = |i: usize, v: f64| {
        Error::invalid(format!("voxel {i} value {v} is not representable as {dtype:?}"))
    };
    match dtype {
        Dtype::Uint8 => {
            for (i, (&v, b)) in values.iter().zip(out.iter_mut()).enumerate() {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(lossy(i, v));
                }
                *b = v as u8;
            }
        }
        Dtype::Int16 => {
            for (i, (&v, c)) in values.iter().zip(out.chunks_exact_mut(2)).enumerate() {
                if v.fract() != 0.0 || !(i16::MIN as f64..=i16::MAX as f64).contains(&v) {
                    return Err(lossy(i, v));
                }
                LittleEndian::write_i16(c, v as i16);
            }
        }
        Dtype::Float32 => {
            for (i, (&v, c)) in values.iter().zip(out.chunks_exact_mut(4)).enumerate() {
                let f = v as f32;
                if f as f64 != v {
                    return Err(lossy(i, v));
                }
                LittleEndian::write_f32(c, f);
            }
        }
        Dtype::Float64 => LittleEndian::write_f64_into(values, &mut out),
    }
    Ok(out)
}

/// Write through a temporary file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_owned(),
    });
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default()
}

/// Load a volume from a `.nii` file or a raw-sidecar `.json` header.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let name = file_name(path);
    if name.ends_with(".nii") {
        nifti::read(path)
    } else if name.ends_with(".json") {
        raw::read(path)
    } else if name.ends_with(".nii.gz") {
        Err(Error::Unsupported("compressed NIfTI (.nii.gz)".into()))
    } else {
        Err(Error::Unsupported(format!(
            "volume file {} (expected .nii or raw .json header)",
            path.display()
        )))
    }
}

/// Save a volume; the format follows the extension as in [`load_volume`].
pub fn save_volume(path: &Path, volume: &Volume, dtype: Dtype) -> Result<()> {
    let name = file_name(path);
    if name.ends_with(".nii") {
        nifti::write(path, volume, dtype)
    } else if name.ends_with(".json") {
        raw::write(path, volume, dtype)
    } else {
        Err(Error::Unsupported(format!("volume file {}", path.display())))
    }
}

/// Load a mask from RLE-JSON (`.json`) or NIfTI (`.nii`, nonzero = set).
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let name = file_name(path);
    if name.ends_with(".json") {
        let file: RleMaskFile = json::read_json(path, "rle mask")?;
        rle_decode(&file)
    } else if name.ends_with(".nii") {
        let vol = nifti::read(path)?;
        let bits = vol.values().iter().map(|&v| v != 0.0).collect();
        BinaryMask::new(*vol.geometry(), bits)
    } else {
        Err(Error::Unsupported(format!(
            "mask file {} (expected .rle.json or .nii)",
            path.display()
        )))
    }
}

/// Save a mask as RLE-JSON, or as a uint8 NIfTI when the path ends `.nii`.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    if file_name(path).ends_with(".nii") {
        let values = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let vol = Volume::new(*mask.geometry(), values)?;
        nifti::write(path, &vol, Dtype::Uint8)
    } else {
        json::write_json(path, &rle_encode(mask))
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
