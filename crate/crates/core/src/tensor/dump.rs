//! Flat tensor archives: one row-major little-endian `f32` file per tensor
//! plus a `manifest.json` with names, shapes and free-form metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::io::write_dir_atomic;

pub const FORMAT: &str = "f32le-rowmajor";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

pub fn encode_f32le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32le(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "f32 buffer length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn file_name_for(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.bin")
}

/// Writes the archive directory atomically (temp dir + rename).
pub fn write_archive<'a, I>(dir: &Path, tensors: I, meta: serde_json::Value) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [usize], &'a [f64])>,
{
    let tensors: Vec<_> = tensors.into_iter().collect();
    write_dir_atomic(dir, |tmp| write_into(tmp, &tensors, meta))
}

/// Writes archive files into an existing directory (no atomic rename).
pub fn write_into(dir: &Path, tensors: &[(&str, &[usize], &[f64])], meta: serde_json::Value) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    for &(name, shape, data) in tensors {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!("archive entry {name}: shape {shape:?} vs {} values", data.len())));
        }
        let file = file_name_for(name);
        if entries.iter().any(|e: &TensorEntry| e.file == file) {
            return Err(Error::Format(format!("duplicate archive entry {name}")));
        }
        fs::write(dir.join(&file), encode_f32le(data))?;
        entries.push(TensorEntry { name: name.to_string(), shape: shape.to_vec(), file });
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, tensors: entries, meta };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join(MANIFEST), bytes)?;
    Ok(())
}

pub struct Archive {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn read_archive(dir: &Path) -> Result<Archive> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported archive {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let data = decode_f32le(&fs::read(dir.join(&e.file))?)?;
        let t = Tensor::new(data, &e.shape)
            .map_err(|_| Error::Format(format!("{}: size does not match shape {:?}", e.file, e.shape)))?;
        tensors.push((e.name, t));
    }
    Ok(Archive { tensors, meta: manifest.meta })
}
