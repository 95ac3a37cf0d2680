//! Checkpoint format: magic `GISW`, version u16, config-hash string, then
//! named tensors (length-prefixed UTF-8 name, rank and dims, little-endian
//! doubles). Writes go through a temp file and rename so an interrupted run
//! never leaves a torn checkpoint behind.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::data::bytes::{put_str, put_u16, put_u32, put_u64, Cursor};
use crate::error::{Error, Result};

use super::model::ModelParams;

const MAGIC: &[u8; 4] = b"GISW";
const VERSION: u16 = 1;

fn encode_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    put_str(buf, name);
    put_u32(buf, shape.len() as u32);
    for &d in shape {
        put_u64(buf, d as u64);
    }
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize parameters (and batch-norm buffers) with the config hash.
pub fn encode_checkpoint(params: &ModelParams, config_hash: &str) -> Vec<u8> {
    let named = params.named();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u16(&mut buf, VERSION);
    put_str(&mut buf, config_hash);
    put_u32(&mut buf, (named.len() + 2) as u32);
    for (name, t) in named {
        encode_tensor(&mut buf, name, t.shape(), t.values());
    }
    let running = &params.fusion.running;
    encode_tensor(
        &mut buf,
        "fusion.running_mean",
        &[running.mean.len()],
        &running.mean,
    );
    encode_tensor(
        &mut buf,
        "fusion.running_var",
        &[running.var.len()],
        &running.var,
    );
    buf
}

/// Atomic checkpoint write: temp file in the same directory, then rename.
pub fn save_checkpoint(path: &Path, params: &ModelParams, config_hash: &str) -> Result<()> {
    let bytes = encode_checkpoint(params, config_hash);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a checkpoint into a parameter set shaped by `config`, verifying
/// magic, version, names and shapes. Returns the stored config hash.
pub fn load_checkpoint(path: &Path, config: &RunConfig) -> Result<(ModelParams, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cursor = Cursor::new(&bytes, "checkpoint");
    if cursor.take(4)? != MAGIC {
        return Err(Error::format_at(
            "not a GISW checkpoint".to_string(),
            path.display().to_string(),
        ));
    }
    let version = cursor.u16()?;
    if version != VERSION {
        return Err(Error::format_at(
            format!("unsupported checkpoint version {version}"),
            path.display().to_string(),
        ));
    }
    let config_hash = cursor.str()?;
    let count = cursor.u32()? as usize;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name = cursor.str()?;
        let rank = cursor.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(cursor.f64()?);
        }
        tensors.insert(name, Tensor::from_vec(shape, values)?);
    }
    if cursor.remaining() != 0 {
        return Err(Error::format_at(
            "trailing bytes after tensors".to_string(),
            path.display().to_string(),
        ));
    }

    let mut params = ModelParams::zeros(config)?;
    for (name, slot) in params.named_mut() {
        let stored = tensors.remove(name).ok_or_else(|| {
            Error::format_at(format!("checkpoint missing tensor {name}"), path.display().to_string())
        })?;
        if stored.shape() != slot.shape() {
            return Err(Error::format_at(
                format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    stored.shape(),
                    slot.shape()
                ),
                path.display().to_string(),
            ));
        }
        *slot = stored;
    }
    for name in ModelParams::buffer_names() {
        let stored = tensors.remove(name).ok_or_else(|| {
            Error::format_at(format!("checkpoint missing tensor {name}"), path.display().to_string())
        })?;
        let buf = if name.ends_with("mean") {
            &mut params.fusion.running.mean
        } else {
            &mut params.fusion.running.var
        };
        if stored.numel() != buf.len() {
            return Err(Error::format_at(
                format!("buffer {name} has wrong size"),
                path.display().to_string(),
            ));
        }
        buf.copy_from_slice(stored.values());
    }
    if !tensors.is_empty() {
        let extra: Vec<String> = tensors.into_keys().collect();
        return Err(Error::format_at(
            format!("unexpected tensors in checkpoint: {extra:?}"),
            path.display().to_string(),
        ));
    }
    Ok((params, config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let config = RunConfig::toy();
        let mut params = ModelParams::init_seeded(&config).unwrap();
        params.fusion.running.mean[0] = 0.25;
        params.fusion.running.var[1] = 3.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gisw");
        save_checkpoint(&path, &params, &config.hash()).unwrap();
        let (loaded, hash) = load_checkpoint(&path, &config).unwrap();
        assert_eq!(hash, config.hash());
        for ((_, a), (_, b)) in params.named().iter().zip(loaded.named().iter()) {
            assert_eq!(a.shape(), b.shape());
            let eq = a
                .values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(eq);
        }
        assert_eq!(params.fusion.running, loaded.fusion.running);

        // Re-encoding the loaded params reproduces the file byte for byte.
        assert_eq!(
            encode_checkpoint(&loaded, &hash),
            std::fs::read(&path).unwrap()
        );
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let toy = RunConfig::toy();
        let params = ModelParams::init_seeded(&toy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gisw");
        save_checkpoint(&path, &params, &toy.hash()).unwrap();
        let full = RunConfig::default();
        assert!(load_checkpoint(&path, &full).is_err());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let config = RunConfig::toy();
        let params = ModelParams::init_seeded(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gisw");
        save_checkpoint(&path, &params, &config.hash()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path, &config).is_err());
    }
}
