//! `model.json` + `model.bin` checkpoint pair.
//!
//! The manifest lists every dense layer in parameter order. `model.bin` holds
//! each layer's weights (row-major, `inputs × outputs`) followed by its bias,
//! as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Activation;

pub const FORMAT: &str = "edrisk-checkpoint/1";
pub const MANIFEST_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "model.bin";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("parameter file holds {found} values, manifest expects {expected}")]
    Length { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerEntry {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// Free-form architecture descriptor owned by the model type.
    pub architecture: serde_json::Value,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub normalization: BTreeMap<String, f64>,
    #[serde(default)]
    pub training: serde_json::Value,
}

impl Manifest {
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(LayerEntry::n_params).sum()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write(dir: &Path, manifest: &Manifest, params: &[f64]) -> Result<(), CheckpointError> {
    if params.len() != manifest.n_params() {
        return Err(CheckpointError::Length {
            expected: manifest.n_params(),
            found: params.len(),
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = serde_json::to_string_pretty(manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let ppath = dir.join(PARAMS_FILE);
    fs::write(&ppath, bytes).map_err(io_err(&ppath))?;
    Ok(())
}

pub fn read(dir: &Path) -> Result<(Manifest, Vec<f64>), CheckpointError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(CheckpointError::Manifest(format!("unknown format {:?}", manifest.format)));
    }
    let ppath = dir.join(PARAMS_FILE);
    let bytes = fs::read(&ppath).map_err(io_err(&ppath))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Length {
            expected: manifest.n_params(),
            found: bytes.len() / 8,
        });
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.len() != manifest.n_params() {
        return Err(CheckpointError::Length {
            expected: manifest.n_params(),
            found: params.len(),
        });
    }
    Ok((manifest, params))
}
