//! QAM1 checkpoints.
//!
//! Layout (little-endian):
//! - magic `QAM1`
//! - config_len: u32, then the model config as `config_len` bytes of JSON
//! - tensor_count: u32
//! - per tensor, in [`ModelParams::tensors`] order: ndim: u32 | ndim × u32 dims | f64 values

use std::path::Path;

use thiserror::Error;

use super::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"QAM1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected QAM1")]
    BadMagic,
    #[error("truncated checkpoint: {0}")]
    TruncatedFile(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("non-finite value in tensor {0}")]
    NonFiniteValue(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("tensor {name}: shape {actual:?} does not match config shape {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(config: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let config_json = serde_json::to_vec(config).expect("config serializes");
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, shape, data) in tensors {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::TruncatedFile(format!("{what} cut short")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    if bytes.len() < 4 && MAGIC.starts_with(bytes) {
        return Err(CheckpointError::TruncatedFile("magic cut short".into()));
    }
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let config_len = cur.u32("config length")?;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len, "config")?)
        .map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;
    config.validate().map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;

    let mut params = ModelParams::zeros(&config);
    let count = cur.u32("tensor count")?;
    let expected_count = params.tensors().len();
    if count != expected_count {
        return Err(CheckpointError::InvalidConfig(format!(
            "checkpoint holds {count} tensors, config implies {expected_count}"
        )));
    }
    let expected_shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s, _)| s).collect();
    for ((name, dst), expected) in params.tensors_mut().into_iter().zip(expected_shapes) {
        let ndim = cur.u32("tensor rank")?;
        let shape = (0..ndim).map(|_| cur.u32("tensor shape")).collect::<Result<Vec<_>, _>>()?;
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch { name: name.to_string(), expected, actual: shape });
        }
        let raw = cur.take(8 * dst.len(), name)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            if !d.is_finite() {
                return Err(CheckpointError::NonFiniteValue(name.to_string()));
            }
        }
    }
    let rest = bytes.len() - cur.pos;
    if rest > 0 {
        return Err(CheckpointError::TrailingBytes(rest));
    }
    Ok((config, params))
}

pub fn save(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(config, params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    decode(&std::fs::read(path)?)
}
