//! Tensors on disk: `<stem>.bin` holds little-endian f64 values in row-major
//! order, `<stem>.json` holds `{"shape": [...]}`.

use std::fs;
use std::path::{Path, PathBuf};

use scout_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

pub fn write_tensor(stem: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(&bin_path(stem), &encode_f64(tensor.data()))?;
    write_json(
        &sidecar_path(stem),
        &Sidecar {
            shape: tensor.shape().to_vec(),
        },
    )
}

pub fn read_tensor(stem: &Path) -> Result<Tensor> {
    let sidecar: Sidecar = read_json(&sidecar_path(stem))?;
    let path = bin_path(stem);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let data = decode_f64(&bytes).ok_or_else(|| Error::format(&path, "length is not a multiple of 8"))?;
    Tensor::new(sidecar.shape, data).map_err(|e| Error::format(&path, e.to_string()))
}
