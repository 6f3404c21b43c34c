//! Versioned binary parameter snapshots.
//!
//! Layout: magic `DTLCKPT1`, then a u64 parameter count, then per
//! parameter: u64 path length, UTF-8 path bytes, u64 rank, u64 dims, and
//! the raw little-endian f64 values. All integers are little-endian u64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{ArchManifest, ModelParams};

const MAGIC: &[u8; 8] = b"DTLCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected DTLCKPT1")]
    VersionMismatch,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("parameter {path}: shape {got:?} does not match manifest {expected:?}")]
    ShapeMismatch {
        path: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("manifest parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("unexpected parameter {0} not in manifest")]
    UnexpectedParam(String),
    #[error("invalid UTF-8 in parameter path")]
    BadPath,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        tensor.with_values(|v| -> std::io::Result<()> {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

/// Load and validate a checkpoint against an architecture manifest. The
/// parameter set and every shape must match exactly; nothing partial is
/// ever returned. `trainable` controls whether the loaded tensors
/// participate in gradient updates (the teacher loads frozen).
pub fn load_checkpoint(
    path: &Path,
    manifest: &ArchManifest,
    trainable: bool,
) -> Result<ModelParams, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Truncated("magic".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::VersionMismatch);
    }
    let count = read_u64(&mut r, "parameter count")? as usize;

    let expected: std::collections::BTreeMap<&str, &Vec<usize>> = manifest
        .entries
        .iter()
        .map(|(p, s)| (p.as_str(), s))
        .collect();

    let mut params = ModelParams::new();
    for _ in 0..count {
        let path_len = read_u64(&mut r, "path length")? as usize;
        let mut path_bytes = vec![0u8; path_len];
        r.read_exact(&mut path_bytes)
            .map_err(|_| CheckpointError::Truncated("path".into()))?;
        let name = String::from_utf8(path_bytes).map_err(|_| CheckpointError::BadPath)?;
        let rank = read_u64(&mut r, &format!("{name} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, &format!("{name} dims"))? as usize);
        }
        let expected_shape = expected
            .get(name.as_str())
            .ok_or_else(|| CheckpointError::UnexpectedParam(name.clone()))?;
        if *expected_shape != &shape {
            return Err(CheckpointError::ShapeMismatch {
                path: name,
                expected: (*expected_shape).clone(),
                got: shape,
            });
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| CheckpointError::Truncated(format!("{name} values")))?;
            values.push(f64::from_le_bytes(buf));
        }
        let tensor = if trainable {
            Tensor::param(&shape, values)
        } else {
            Tensor::constant(&shape, values)
        };
        params.insert(name, tensor);
    }

    for (name, _) in &manifest.entries {
        if !params.contains(name) {
            return Err(CheckpointError::MissingParam(name.clone()));
        }
    }
    Ok(params)
}
