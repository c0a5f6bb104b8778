//! Deterministic JSON output: sorted keys, two-space indent, trailing
//! newline. Derived statistics go through [`sig9`] so reports carry a
//! fixed nine significant digits; values that feed later computations
//! (thresholds, spacing) are written losslessly.

use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Round to nine significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn sig9<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*x))
}

pub fn sig9_seq<S: Serializer, T: AsRef<[f64]>>(xs: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(xs.as_ref().iter().map(|&x| round_sig9(x)))
}

pub fn sig9_pair<S: Serializer>(xs: &(f64, f64), s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq([round_sig9(xs.0), round_sig9(xs.1)])
}

pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    // Going through `Value` sorts object keys (BTreeMap-backed map).
    let value = serde_json::to_value(value).map_err(|e| Error::format("json", e.to_string()))?;
    let mut out = serde_json::to_vec_pretty(&value).map_err(|e| Error::format("json", e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(String::from_utf8(to_canonical_vec(value)?).expect("serde_json emits utf-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let bytes = to_canonical_vec(value)?;
    super::write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(what, format!("{}: {e}", path.display())))
}
