//! On-disk dataset cache.
//!
//! Binary container (all little-endian): magic `GISD`, version u16, sample
//! count u64, then length-prefixed samples (u64 byte length + payload). Each
//! payload carries its split tag, metadata, target history, neighbors and
//! future. A sidecar JSON manifest (`<cache>.json`) holds the full config,
//! the config hash, the seed, per-split counts and SHA-256 hashes of each
//! split's encoded bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::encoder::HistorySequence;
use crate::error::{Error, Result};
use crate::social::GridCell;

use super::bytes::{put_f64, put_i64, put_str, put_u32, put_u64, Cursor};
use super::{DatasetSplit, Neighbor, Sample, SampleMeta, SegmentStats};

const MAGIC: &[u8; 4] = b"GISD";
const VERSION: u16 = 1;

/// Per-dataset bookkeeping stored beside the binary cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub counts: DatasetStats,
    pub split_hashes: SplitHashes,
    pub segment_stats: SegmentStats,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetStats {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitHashes {
    pub train: String,
    pub val: String,
    pub test: String,
}

pub fn manifest_path(cache: &Path) -> PathBuf {
    let mut name = cache.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    cache.with_file_name(name)
}

fn encode_sample(sample: &Sample, split_tag: u8, buf: &mut Vec<u8>) {
    let mut payload = Vec::new();
    payload.push(split_tag);
    put_str(&mut payload, &sample.meta.source);
    put_u64(&mut payload, sample.meta.vehicle_id);
    put_i64(&mut payload, sample.meta.anchor_frame);
    put_u32(&mut payload, sample.target_history.len() as u32);
    for &(x, y) in sample.target_history.frames() {
        put_f64(&mut payload, x);
        put_f64(&mut payload, y);
    }
    put_u32(&mut payload, sample.neighbors.len() as u32);
    for n in &sample.neighbors {
        put_u32(&mut payload, n.cell.row() as u32);
        put_u32(&mut payload, n.cell.col() as u32);
        put_f64(&mut payload, n.abs_longitudinal);
        put_u32(&mut payload, n.history.len() as u32);
        for &(x, y) in n.history.frames() {
            put_f64(&mut payload, x);
            put_f64(&mut payload, y);
        }
    }
    put_u32(&mut payload, sample.future.len() as u32);
    for &(x, y) in &sample.future {
        put_f64(&mut payload, x);
        put_f64(&mut payload, y);
    }
    put_u64(buf, payload.len() as u64);
    buf.extend_from_slice(&payload);
}

fn decode_sample(cursor: &mut Cursor<'_>, config: &RunConfig) -> Result<(Sample, u8)> {
    let len = cursor.u64()? as usize;
    let body = cursor.take(len)?;
    let mut c = Cursor::new(body, "sample");
    let tag = c.take(1)?[0];
    let source = c.str()?;
    let vehicle_id = c.u64()?;
    let anchor_frame = c.i64()?;
    let read_frames = |c: &mut Cursor<'_>| -> Result<Vec<(f64, f64)>> {
        let n = c.u32()? as usize;
        let mut frames = Vec::with_capacity(n);
        for _ in 0..n {
            let x = c.f64()?;
            let y = c.f64()?;
            frames.push((x, y));
        }
        Ok(frames)
    };
    let target_history = HistorySequence::new(read_frames(&mut c)?)?;
    let n_neighbors = c.u32()? as usize;
    let mut neighbors = Vec::with_capacity(n_neighbors);
    for _ in 0..n_neighbors {
        let row = c.u32()? as usize;
        let col = c.u32()? as usize;
        let abs_longitudinal = c.f64()?;
        let history = HistorySequence::new(read_frames(&mut c)?)?;
        neighbors.push(Neighbor {
            history,
            cell: GridCell::new(row, col, config)?,
            abs_longitudinal,
        });
    }
    let future = read_frames(&mut c)?;
    let sample = Sample {
        target_history,
        neighbors,
        future,
        meta: SampleMeta {
            source,
            vehicle_id,
            anchor_frame,
        },
    };
    Ok((sample, tag))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write the cache and its manifest. Byte-identical for identical inputs.
pub fn save_dataset(
    path: &Path,
    split: &DatasetSplit,
    config: &RunConfig,
    segment_stats: SegmentStats,
) -> Result<CacheManifest> {
    let mut body = Vec::new();
    let mut hashes = SplitHashes::default();
    for (tag, part, slot) in [
        (0u8, &split.train, &mut hashes.train as &mut String),
        (1u8, &split.val, &mut hashes.val),
        (2u8, &split.test, &mut hashes.test),
    ] {
        let mut part_bytes = Vec::new();
        for sample in part {
            sample.validate(config)?;
            encode_sample(sample, tag, &mut part_bytes);
        }
        *slot = hex(&Sha256::digest(&part_bytes));
        body.extend_from_slice(&part_bytes);
    }

    let mut file = Vec::new();
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut file, split.len() as u64);
    file.extend_from_slice(&body);
    std::fs::write(path, &file).map_err(|e| Error::io(path.display().to_string(), e))?;

    let manifest = CacheManifest {
        config: config.clone(),
        config_hash: config.hash(),
        seed: split.seed,
        counts: DatasetStats {
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
        },
        split_hashes: hashes,
        segment_stats,
    };
    let manifest_file = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_file, text)
        .map_err(|e| Error::io(manifest_file.display().to_string(), e))?;
    Ok(manifest)
}

/// Load a cache and its manifest, validating magic, version and counts.
pub fn load_dataset(path: &Path) -> Result<(DatasetSplit, CacheManifest)> {
    let manifest_file = manifest_path(path);
    let manifest_text = std::fs::read_to_string(&manifest_file)
        .map_err(|e| Error::io(manifest_file.display().to_string(), e))?;
    let manifest: CacheManifest = serde_json::from_str(&manifest_text).map_err(|e| {
        Error::format_at(format!("bad manifest: {e}"), manifest_file.display().to_string())
    })?;
    manifest.config.validate()?;

    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cursor = Cursor::new(&bytes, "dataset cache");
    if cursor.take(4)? != MAGIC {
        return Err(Error::format_at(
            "not a GISD dataset cache".to_string(),
            path.display().to_string(),
        ));
    }
    let version = cursor.u16()?;
    if version != VERSION {
        return Err(Error::format_at(
            format!("unsupported cache version {version}"),
            path.display().to_string(),
        ));
    }
    let count = cursor.u64()? as usize;
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed: manifest.seed,
    };
    for _ in 0..count {
        let (sample, tag) = decode_sample(&mut cursor, &manifest.config)?;
        sample.validate(&manifest.config)?;
        match tag {
            0 => split.train.push(sample),
            1 => split.val.push(sample),
            2 => split.test.push(sample),
            other => {
                return Err(Error::format(format!("unknown split tag {other}")));
            }
        }
    }
    if cursor.remaining() != 0 {
        return Err(Error::format_at(
            format!("{} trailing bytes after samples", cursor.remaining()),
            path.display().to_string(),
        ));
    }
    if split.train.len() != manifest.counts.train
        || split.val.len() != manifest.counts.val
        || split.test.len() != manifest.counts.test
    {
        return Err(Error::format_at(
            "manifest counts disagree with cache contents".to_string(),
            path.display().to_string(),
        ));
    }
    Ok((split, manifest))
}
