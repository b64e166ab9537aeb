// SPDX-License-Identifier: Apache-2.0

//! Named-tensor container.
//!
//! Layout: the 8 magic bytes `GLTENSOR`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the UTF-8 JSON manifest,
//! then every tensor's scalars back to back in little-endian order. The
//! manifest lists `dtype`, each tensor's `name`, `shape` and scalar
//! `offset`, and a free-form `meta` object.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GLTENSOR";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

pub fn encode<T: Real>(tensors: &[(String, Tensor<T>)], meta: &serde_json::Value) -> Vec<u8> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let manifest = Manifest {
        dtype: T::DTYPE.into(),
        tensors: entries,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + offset * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

pub type Decoded<T> = (Vec<(String, Tensor<T>)>, serde_json::Value);

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Decoded<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a tensor container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[20..body]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "stored dtype {} but {} requested",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let data = &bytes[body..];
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset * T::BYTES;
        let end = start + n * T::BYTES;
        if end > data.len() {
            return Err(bad("truncated tensor data"));
        }
        let vals = data[start..end].chunks(T::BYTES).map(T::read_le).collect();
        out.push((e.name, Tensor::new(&e.shape, vals)?));
    }
    Ok((out, manifest.meta))
}

/// Writes through a temporary sibling and renames it into place.
pub fn save<T: Real>(path: &Path, tensors: &[(String, Tensor<T>)], meta: &serde_json::Value) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, encode(tensors, meta))?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Decoded<T>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let ts = vec![
            (
                "a".to_string(),
                Tensor::<f32>::from_f64(&[2, 2], &[1.0, -0.5, 3.25, 1e-9]).unwrap(),
            ),
            (
                "b".to_string(),
                Tensor::<f32>::from_f64(&[3], &[7.0, 8.0, 9.0]).unwrap(),
            ),
        ];
        let meta = serde_json::json!({"epoch": 3});
        let (back, m) = decode::<f32>(&encode(&ts, &meta)).unwrap();
        assert_eq!(back, ts);
        assert_eq!(m, meta);
        assert!(decode::<f64>(&encode(&ts, &meta)).is_err());
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = encode::<f64>(&[], &serde_json::Value::Null);
        bytes[8] = 9;
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Version { found: 9, .. })));
    }
}
