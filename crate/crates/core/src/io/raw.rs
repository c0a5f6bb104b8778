//! Raw sidecar volumes: a JSON header next to a little-endian z-major
//! payload file.
//!
//! ```json
//! {"format_version": 1, "dims": [64, 64, 10], "spacing_mm": [0.59, 0.59, 3.0],
//!  "dtype": "float32", "byte_order": "little", "data_file": "stir.bin"}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{json, Dtype};
use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    #[serde(default = "little")]
    pub byte_order: String,
    /// Payload path relative to the header. Defaults to the header name
    /// with a `.bin` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

fn little() -> String {
    "little".to_owned()
}

fn default_payload(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

pub fn read(header_path: &Path) -> Result<Volume> {
    let header: RawHeader = json::read_json(header_path, "raw volume header")?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "raw header format_version {}",
            header.format_version
        )));
    }
    if header.byte_order != "little" {
        return Err(Error::Unsupported(format!("byte order {:?}", header.byte_order)));
    }
    let geometry = Geometry::new(header.dims, header.spacing_mm)?;
    let payload = match &header.data_file {
        Some(f) => header_path.parent().unwrap_or(Path::new(".")).join(f),
        None => default_payload(header_path),
    };
    let bytes = std::fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = geometry.voxel_count() * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            "raw volume payload",
            format!(
                "{} has {} bytes, header {:?} {:?} needs {expected}",
                payload.display(),
                bytes.len(),
                header.dims,
                header.dtype
            ),
        ));
    }
    let values = super::decode_le(&bytes, header.dtype, geometry.voxel_count())?;
    Volume::new(geometry, values)
}

pub fn write(header_path: &Path, volume: &Volume, dtype: Dtype) -> Result<()> {
    let payload = default_payload(header_path);
    let bytes = super::encode_le(volume.values(), dtype)?;
    let g = volume.geometry();
    let header = RawHeader {
        format_version: FORMAT_VERSION,
        dims: g.dims(),
        spacing_mm: g.spacing_mm(),
        dtype,
        byte_order: little(),
        data_file: payload.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    super::write_atomic(&payload, &bytes)?;
    json::write_json(header_path, &header)
}
