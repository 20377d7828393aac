//! Per-chunk feature files.
//!
//! File layout: the 8-byte magic `EGOFEAT1`, a little-endian `u32` header
//! length, a JSON header, then the GCC-PHAT matrix as little-endian `f32`
//! (row-major) followed by the patch matrix as raw `u8` (row-major).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;

const MAGIC: &[u8; 8] = b"EGOFEAT1";
const FORMAT_VERSION: u32 = 1;

pub const LAG_CONVENTION: &str = "column k holds lag k - Z/2 samples; positive lag = channel 0 (left) leads";
pub const PATCH_LAYOUT: &str = "row-major patch grid; each patch row-major with RGB innermost; raw 0-255";

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkFeatures {
    pub gcc: Array2<f32>,
    pub patches: Array2<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheHeader {
    pub version: u32,
    pub config_hash: String,
    pub gcc_shape: [usize; 2],
    pub gcc_dtype: String,
    pub patch_shape: [usize; 2],
    pub patch_dtype: String,
    pub lag_convention: String,
    pub patch_layout: String,
}

/// SHA-256 over everything that changes feature values.
pub fn config_hash(cfg: &FeatureConfig, sample_rate: u32) -> String {
    let key = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "features": cfg,
        "sample_rate": sample_rate,
    });
    let mut h = Sha256::new();
    h.update(key.to_string().as_bytes());
    hex::encode(h.finalize())
}

pub fn encode(feat: &ChunkFeatures, hash: &str) -> Vec<u8> {
    let header = CacheHeader {
        version: FORMAT_VERSION,
        config_hash: hash.to_string(),
        gcc_shape: [feat.gcc.nrows(), feat.gcc.ncols()],
        gcc_dtype: "f32-le".into(),
        patch_shape: [feat.patches.nrows(), feat.patches.ncols()],
        patch_dtype: "u8".into(),
        lag_convention: LAG_CONVENTION.into(),
        patch_layout: PATCH_LAYOUT.into(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(12 + json.len() + feat.gcc.len() * 4 + feat.patches.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in feat.gcc.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(feat.patches.iter());
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(CacheHeader, ChunkFeatures)> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature file"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + hlen;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let header: CacheHeader =
        serde_json::from_slice(&bytes[12..body]).map_err(|e| Error::format(path, e.to_string()))?;
    let [gr, gc] = header.gcc_shape;
    let [pr, pc] = header.patch_shape;
    if bytes.len() != body + gr * gc * 4 + pr * pc {
        return Err(bad("payload size does not match header shapes"));
    }
    let gcc: Vec<f32> = bytes[body..body + gr * gc * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let patches = bytes[body + gr * gc * 4..].to_vec();
    let feat = ChunkFeatures {
        gcc: Array2::from_shape_vec((gr, gc), gcc).map_err(|e| Error::format(path, e.to_string()))?,
        patches: Array2::from_shape_vec((pr, pc), patches).map_err(|e| Error::format(path, e.to_string()))?,
    };
    Ok((header, feat))
}

/// Outcome of looking a chunk up in the cache.
#[derive(Debug)]
pub enum Lookup {
    Hit(ChunkFeatures),
    Missing,
    Stale { found: String },
}

pub struct FeatureCache {
    dir: PathBuf,
    hash: String,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, hash: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            hash: hash.into(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache path for a manifest-relative audio path.
    pub fn path_for(&self, rel_wav: &str) -> PathBuf {
        self.dir.join(Path::new(rel_wav).with_extension("feat"))
    }

    pub fn lookup(&self, rel_wav: &str) -> Result<Lookup> {
        let path = self.path_for(rel_wav);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Lookup::Missing),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (header, feat) = decode(&bytes, &path)?;
        if header.config_hash != self.hash {
            return Ok(Lookup::Stale {
                found: header.config_hash,
            });
        }
        Ok(Lookup::Hit(feat))
    }

    pub fn store(&self, rel_wav: &str, feat: &ChunkFeatures) -> Result<()> {
        let path = self.path_for(rel_wav);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, encode(feat, &self.hash)).map_err(|e| Error::io(&path, e))
    }
}
