//! Model checkpoints.
//!
//! Layout: the 8-byte magic `SCOUTNET`, a little-endian u64 header length,
//! the JSON header, then every parameter array as little-endian f64 in the
//! order the header lists them.

use std::fs;
use std::path::Path;

use scout_core::micronet::{Architecture, ModelBundle, Params};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor_io::{decode_f64, encode_f64};

pub const MAGIC: &[u8; 8] = b"SCOUTNET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub arch: Architecture,
    pub tap: String,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub arrays: Vec<ArraySpec>,
}

pub fn encode(model: &ModelBundle) -> Vec<u8> {
    let arrays = model.params.arrays();
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        tap: Architecture::tap_name(model.tap),
        seed: model.seed,
        class_names: model.class_names.clone(),
        arrays: arrays
            .iter()
            .map(|(name, values)| ArraySpec {
                name: name.clone(),
                len: values.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * arrays.iter().map(|(_, v)| v.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in &arrays {
        out.extend_from_slice(&encode_f64(values));
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelBundle> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a scout checkpoint (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::format(path, format!("corrupt header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    header.arch.validate()?;
    let tap = header.arch.tap_index(&header.tap)?;

    let mut params = Params::zeros(&header.arch);
    let expected: Vec<(String, usize)> = params.arrays().into_iter().map(|(n, v)| (n, v.len())).collect();
    let declared: Vec<(String, usize)> = header.arrays.iter().map(|a| (a.name.clone(), a.len)).collect();
    if expected != declared {
        return Err(bad("array list does not match the architecture"));
    }
    let total: usize = expected.iter().map(|(_, n)| n).sum();
    let body = &bytes[header_end..];
    if body.len() < total * 8 {
        return Err(bad("truncated weights"));
    }
    if body.len() > total * 8 {
        return Err(bad("trailing bytes after weights"));
    }
    let values = decode_f64(body).ok_or_else(|| bad("weights are not f64-aligned"))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite weight"));
    }
    let mut offset = 0;
    for array in params.arrays_mut() {
        let n = array.len();
        array.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    let model = ModelBundle {
        arch: header.arch,
        params,
        tap,
        class_names: header.class_names,
        seed: header.seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn save(model: &ModelBundle, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Rejects a model whose class list differs from the dataset's.
pub fn check_classes(model: &ModelBundle, dataset_classes: &[String]) -> Result<()> {
    if model.class_names != dataset_classes {
        return Err(Error::ClassMismatch {
            model: model.class_names.clone(),
            dataset: dataset_classes.to_vec(),
        });
    }
    Ok(())
}
