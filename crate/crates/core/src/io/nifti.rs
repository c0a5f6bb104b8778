//! Single-file NIfTI-1 (`.nii`, magic `n+1`) reader and writer.
//!
//! Only little-endian 3D images are accepted. Supported data types are
//! uint8, int16, float32 and float64. `scl_slope`/`scl_inter` are applied
//! on read; a slope of zero means "no scaling".

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::Dtype;
use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume};

const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const DATA_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const NIFTI_UNITS_MM: u8 = 2;

fn dtype_code(dtype: Dtype) -> i16 {
    match dtype {
        Dtype::Uint8 => 2,
        Dtype::Int16 => 4,
        Dtype::Float32 => 16,
        Dtype::Float64 => 64,
    }
}

fn dtype_from_code(code: i16) -> Result<Dtype> {
    Ok(match code {
        2 => Dtype::Uint8,
        4 => Dtype::Int16,
        16 => Dtype::Float32,
        64 => Dtype::Float64,
        other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            "NIfTI header",
            format!("{} bytes, need {HEADER_SIZE}", bytes.len()),
        ));
    }
    let le = LittleEndian::read_i32(&bytes[0..4]);
    if le != HEADER_SIZE as i32 {
        if byteorder::BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        return Err(Error::format("NIfTI header", format!("sizeof_hdr is {le}, not 348")));
    }
    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic == MAGIC_PAIR {
        return Err(Error::Unsupported("NIfTI .hdr/.img pairs".into()));
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::format("NIfTI header", format!("bad magic {magic:?}")));
    }

    let mut dim = [0i16; 8];
    LittleEndian::read_i16_into(&bytes[OFF_DIM..OFF_DIM + 16], &mut dim);
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::format("NIfTI header", format!("dim[0] = {rank}")));
    }
    let rank = rank as usize;
    let mut dims = [1usize; 3];
    for axis in 0..3 {
        if axis < rank {
            let d = dim[axis + 1];
            if d < 1 {
                return Err(Error::format("NIfTI header", format!("dim[{}] = {d}", axis + 1)));
            }
            dims[axis] = d as usize;
        }
    }
    if (4..=rank).any(|a| dim[a] > 1) {
        return Err(Error::Unsupported(format!(
            "NIfTI with {rank} dimensions (only 3D volumes)"
        )));
    }

    let dtype = dtype_from_code(LittleEndian::read_i16(&bytes[OFF_DATATYPE..]))?;
    let bitpix = LittleEndian::read_i16(&bytes[OFF_BITPIX..]);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::format(
            "NIfTI header",
            format!("bitpix {bitpix} does not match {dtype:?}"),
        ));
    }
    let mut pixdim = [0f32; 8];
    LittleEndian::read_f32_into(&bytes[OFF_PIXDIM..OFF_PIXDIM + 32], &mut pixdim);
    let spacing_mm = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64].map(|s| {
        // Trailing unused axes often carry a pixdim of 0.
        if s == 0.0 {
            1.0
        } else {
            s.abs()
        }
    });
    let vox_offset = LittleEndian::read_f32(&bytes[OFF_VOX_OFFSET..]);
    if !(vox_offset >= DATA_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::format("NIfTI header", format!("vox_offset {vox_offset}")));
    }
    Ok(NiftiHeader {
        dims,
        spacing_mm,
        dtype,
        vox_offset: vox_offset as usize,
        scl_slope: LittleEndian::read_f32(&bytes[OFF_SCL_SLOPE..]),
        scl_inter: LittleEndian::read_f32(&bytes[OFF_SCL_INTER..]),
    })
}

/// Decode a full `.nii` image held in memory.
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    let header = parse_header(bytes)?;
    let geometry = Geometry::new(header.dims, header.spacing_mm)?;
    let n = geometry.voxel_count();
    let need = header.vox_offset + n * header.dtype.size();
    if bytes.len() < need {
        return Err(Error::format(
            "NIfTI payload",
            format!("truncated: {} bytes, need {need}", bytes.len()),
        ));
    }
    let mut values = super::decode_le(&bytes[header.vox_offset..need], header.dtype, n)?;
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut values {
            *v = slope * *v + inter;
        }
    }
    Volume::new(geometry, values)
}

pub fn read(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn encode(volume: &Volume, dtype: Dtype) -> Result<Vec<u8>> {
    let g = volume.geometry();
    let dims = g.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("NIfTI-1 dims {dims:?} exceed 32767")));
    }
    let payload = super::encode_le(volume.values(), dtype)?;
    let mut out = Vec::with_capacity(DATA_OFFSET + payload.len());
    let mut header = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut header[0..4], HEADER_SIZE as i32);
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    LittleEndian::write_i16_into(&dim, &mut header[OFF_DIM..OFF_DIM + 16]);
    LittleEndian::write_i16(&mut header[OFF_DATATYPE..], dtype_code(dtype));
    LittleEndian::write_i16(&mut header[OFF_BITPIX..], (dtype.size() * 8) as i16);
    let s = g.spacing_mm();
    let pixdim = [1.0f32, s[0] as f32, s[1] as f32, s[2] as f32, 0.0, 0.0, 0.0, 0.0];
    LittleEndian::write_f32_into(&pixdim, &mut header[OFF_PIXDIM..OFF_PIXDIM + 32]);
    LittleEndian::write_f32(&mut header[OFF_VOX_OFFSET..], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut header[OFF_SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut header[OFF_SCL_INTER..], 0.0);
    header[OFF_XYZT_UNITS] = NIFTI_UNITS_MM;
    header[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    out.extend_from_slice(&header);
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write(path: &Path, volume: &Volume, dtype: Dtype) -> Result<()> {
    let bytes = encode(volume, dtype)?;
    super::write_atomic(path, &bytes)
}

/// Overwrite the scaling fields of an encoded image. Test fixtures use
/// this to build scaled files.
pub fn set_scaling(bytes: &mut [u8], slope: f32, inter: f32) {
    LittleEndian::write_f32(&mut bytes[OFF_SCL_SLOPE..], slope);
    LittleEndian::write_f32(&mut bytes[OFF_SCL_INTER..], inter);
}
