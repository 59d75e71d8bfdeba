//! Binary training-set container.
//!
//! Layout: `b"KLTS"`, `u32` schema version, `u64` header length, a JSON
//! header, then every patch as little-endian `f64` in sample order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Sample, SampleGroup, TrainingSet};
use crate::error::{Error, Result};
use crate::imagekit::{FeaturePatch, Normalization, NUM_CHANNELS};
use crate::TRAINSET_SCHEMA_VERSION;

const MAGIC: &[u8; 4] = b"KLTS";

#[derive(Serialize, Deserialize)]
struct Header {
    patch_size: usize,
    seed: u64,
    normalization: Normalization,
    labels: Vec<i8>,
    sample_groups: Vec<usize>,
    images: Vec<usize>,
    groups: Vec<SampleGroup>,
    #[serde(default)]
    config: serde_json::Value,
}

/// Serializes a training set with an arbitrary config record.
pub fn encode_archive(ts: &TrainingSet, config: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        patch_size: ts.patch_size(),
        seed: ts.seed,
        normalization: *ts.normalization(),
        labels: ts.samples().iter().map(|s| s.label).collect(),
        sample_groups: ts.samples().iter().map(|s| s.group).collect(),
        images: ts.samples().iter().map(|s| s.image).collect(),
        groups: ts.groups().to_vec(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + ts.len() * ts.dim() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&TRAINSET_SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in ts.samples() {
        for v in s.patch.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode_archive`].
pub fn decode_archive(bytes: &[u8]) -> Result<(TrainingSet, serde_json::Value)> {
    let short = |offset: usize| Error::Decode {
        offset,
        message: "archive truncated".into(),
    };
    if bytes.len() < 16 {
        return Err(short(bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            message: "not a training-set archive".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TRAINSET_SCHEMA_VERSION {
        return Err(Error::Decode {
            offset: 4,
            message: format!("unsupported archive version {version}"),
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| short(16))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Decode {
        offset: 16,
        message: format!("bad header: {e}"),
    })?;
    let k = header.labels.len();
    if header.sample_groups.len() != k || header.images.len() != k {
        return Err(Error::Decode {
            offset: 16,
            message: "per-sample header arrays differ in length".into(),
        });
    }
    let dim = NUM_CHANNELS * header.patch_size * header.patch_size;
    let expected = k * dim * 8;
    if bytes.len() - body != expected {
        return Err(Error::Decode {
            offset: body,
            message: format!("expected {expected} payload bytes, found {}", bytes.len() - body),
        });
    }
    let mut samples = Vec::with_capacity(k);
    for i in 0..k {
        let start = body + i * dim * 8;
        let data: Vec<f64> = bytes[start..start + dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Sample {
            patch: FeaturePatch::new(header.patch_size, data)?,
            label: header.labels[i],
            group: header.sample_groups[i],
            image: header.images[i],
        });
    }
    let ts = TrainingSet::new(
        header.patch_size,
        samples,
        header.groups,
        header.normalization,
        header.seed,
    )?;
    Ok((ts, header.config))
}

pub fn write_archive(path: &Path, ts: &TrainingSet, config: &serde_json::Value) -> Result<()> {
    let bytes = encode_archive(ts, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<(TrainingSet, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}
