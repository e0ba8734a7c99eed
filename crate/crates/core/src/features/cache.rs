//! On-disk feature sets.
//!
//! Layout (little-endian): magic `WRFS`, version `u32`, keypoint count `u32`,
//! then per keypoint `x, y, scale, angle` as `f32` followed by the 128 `f32`
//! descriptor components. Image size is not stored; callers know it from the
//! catalog bounding box or the image header.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Descriptor, FeatureSet, Keypoint, DESCRIPTOR_LEN};
use crate::catalog::BBox;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"WRFS";
pub const CACHE_VERSION: u32 = 1;

pub fn write_feature_set<W: Write>(fs: &FeatureSet, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(12 + fs.len() * (4 + DESCRIPTOR_LEN) * 4);
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fs.len() as u32).to_le_bytes());
    for (k, d) in fs.keypoints.iter().zip(&fs.descriptors) {
        for v in [k.x, k.y, k.scale, k.angle].iter().chain(d.0.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

pub fn read_feature_set<R: Read>(mut input: R, width: u32, height: u32) -> Result<FeatureSet> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Cache(format!("read failed: {e}")))?;
    if bytes.len() < 12 || bytes[..4] != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let n = word(8) as usize;
    let record = (4 + DESCRIPTOR_LEN) * 4;
    if bytes.len() != 12 + n * record {
        return Err(Error::Cache(format!(
            "expected {} bytes for {n} keypoints, found {}",
            12 + n * record,
            bytes.len()
        )));
    }
    let mut fs = FeatureSet {
        width,
        height,
        keypoints: Vec::with_capacity(n),
        descriptors: Vec::with_capacity(n),
    };
    for rec in bytes[12..].chunks_exact(record) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        fs.keypoints.push(Keypoint {
            x: f(0),
            y: f(1),
            scale: f(2),
            angle: f(3),
        });
        let mut d = [0.0f32; DESCRIPTOR_LEN];
        for (k, slot) in d.iter_mut().enumerate() {
            *slot = f(4 + k);
        }
        fs.descriptors.push(Descriptor(d));
    }
    Ok(fs)
}

/// Hex SHA-256 of any serializable parameter block.
pub fn params_hash<T: Serialize>(params: &T) -> String {
    let json = serde_json::to_vec(params).expect("parameters serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub content_hash: String,
    pub bbox: Option<BBox>,
    pub params_hash: String,
}

impl CacheKey {
    pub fn for_file(path: &Path, bbox: Option<BBox>, params_hash: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(CacheKey {
            content_hash: hex::encode(Sha256::digest(&bytes)),
            bbox,
            params_hash: params_hash.to_string(),
        })
    }

    pub fn file_stem(&self) -> String {
        let bbox = self
            .bbox
            .map(|b| format!("{},{},{},{}", b.x, b.y, b.w, b.h))
            .unwrap_or_else(|| "full".into());
        let digest = Sha256::digest(format!("{}|{}|{}", self.content_hash, bbox, self.params_hash).as_bytes());
        hex::encode(&digest[..16])
    }
}

/// Directory of `<key>.wrfs` files.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(FeatureCache { dir })
    }

    pub fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.wrfs", key.file_stem()))
    }

    pub fn load(&self, key: &CacheKey, width: u32, height: u32) -> Option<FeatureSet> {
        let file = fs::File::open(self.path(key)).ok()?;
        read_feature_set(std::io::BufReader::new(file), width, height).ok()
    }

    /// Writes through a temporary file so a crash never leaves a torn entry.
    pub fn store(&self, key: &CacheKey, fs_: &FeatureSet) -> Result<()> {
        let path = self.path(key);
        let tmp = path.with_extension("wrfs.tmp");
        let mut bytes = Vec::new();
        write_feature_set(fs_, &mut bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
