//! Flat binary parameter container with a JSON manifest.
//!
//! The `.bin` file holds every array's row-major values as little-endian
//! `f64`, concatenated in manifest order. Round trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{Dims, ModelParameters};
use crate::error::{invalid_input, Result};

const FORMAT: &str = "homefed-params-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the binary file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dims: Dims,
    pub arrays: Vec<ArrayEntry>,
}

impl Manifest {
    pub fn describe(params: &ModelParameters) -> Self {
        let mut offset = 0;
        let arrays = params
            .arrays()
            .map(|a| {
                let e = ArrayEntry {
                    name: a.name.to_string(),
                    shape: a.shape.to_vec(),
                    offset,
                };
                offset += a.values.len();
                e
            })
            .collect();
        Self {
            format: FORMAT.into(),
            dims: params.dims(),
            arrays,
        }
    }
}

pub fn write_binary<W: Write>(mut w: W, params: &ModelParameters) -> Result<()> {
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R, manifest: &Manifest) -> Result<ModelParameters> {
    if manifest.format != FORMAT {
        return Err(invalid_input(format!("unsupported parameter format {:?}", manifest.format)));
    }
    if manifest != &Manifest::describe(&ModelParameters::zeros(manifest.dims)) {
        return Err(invalid_input("manifest layout does not match its dims"));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid_input("parameter file length is not a multiple of 8"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ModelParameters::from_parts(manifest.dims, data)
        .ok_or_else(|| invalid_input("parameter file length does not match manifest"))
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save(params: &ModelParameters, dir: &Path, stem: &str) -> Result<()> {
    let (bin, json) = paths(dir, stem);
    let mut buf = Vec::with_capacity(params.len() * 8);
    write_binary(&mut buf, params)?;
    fs::write(bin, buf)?;
    fs::write(json, serde_json::to_string_pretty(&Manifest::describe(params))?)?;
    Ok(())
}

pub fn load(dir: &Path, stem: &str) -> Result<ModelParameters> {
    let (bin, json) = paths(dir, stem);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json)?)?;
    read_binary(fs::File::open(bin)?, &manifest)
}
