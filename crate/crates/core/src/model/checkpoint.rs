//! Model checkpoint file.
//!
//! Layout: one line of JSON header
//! `{"format":"tpnet-checkpoint","version":1,"param_count":P,"config":{...}}`
//! terminated by `\n`, followed by exactly `P` little-endian `f64` values in
//! the flat parameter order documented in [`super::layout`].

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "tpnet-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    BadHeader(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint holds {found} bytes of parameters, expected {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint config rejected: {0}")]
    Config(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    param_count: usize,
    config: ModelConfig,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<(), CheckpointError> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: CHECKPOINT_VERSION,
        param_count: params.len(),
        config: params.config().clone(),
    };
    let line = serde_json::to_string(&header).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params.flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelParams, CheckpointError> {
    let mut reader = BufReader::new(r);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(CheckpointError::BadHeader("missing header line".into()));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT_TAG) {
        return Err(CheckpointError::BadHeader("wrong format tag".into()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = header.param_count * 8;
    if bytes.len() != expected {
        return Err(CheckpointError::Truncated { expected, found: bytes.len() });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ModelParams::from_flat(header.config, values)?)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<(), CheckpointError> {
    let file = fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    read_checkpoint(fs::File::open(path)?)
}
