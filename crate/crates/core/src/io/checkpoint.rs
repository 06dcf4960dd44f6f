use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::field::{Architecture, NeRefNetwork};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NRFC";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint architecture invalid: {0}")]
    Architecture(String),
}

/// Header (magic, version, architecture, parameter count) followed by the
/// parameters as little-endian `f32`.
pub fn write_checkpoint(network: &NeRefNetwork) -> Vec<u8> {
    let a = network.arch();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * network.params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [a.depth, a.width, a.head_depth, a.encoding_freqs, a.skip_layer] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&a.density_scale.to_le_bytes());
    out.extend_from_slice(&(network.params.len() as u64).to_le_bytes());
    for p in &network.params {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<NeRefNetwork, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let arch = Architecture {
        depth: u32_at(8) as usize,
        width: u32_at(12) as usize,
        head_depth: u32_at(16) as usize,
        encoding_freqs: u32_at(20) as usize,
        skip_layer: u32_at(24) as usize,
        density_scale: f64::from_le_bytes(bytes[32..40].try_into().unwrap()),
    };
    arch.validate().map_err(CheckpointError::Architecture)?;
    let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() != expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let params = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    NeRefNetwork::from_params(arch, params).map_err(CheckpointError::Architecture)
}

pub fn save_checkpoint(path: &Path, network: &NeRefNetwork) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&write_checkpoint(network)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<NeRefNetwork, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
