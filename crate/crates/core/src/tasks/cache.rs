//! Versioned binary cache for trained parameters and generated image sets,
//! keyed by a config hash the caller supplies.

use super::idx::ImageSet;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

/// Concurrent writers (parallel jobs sharing a cache key) each get a unique
/// scratch file; the final rename makes the last fully-written copy win.
static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

fn scratch_path(path: &Path) -> PathBuf {
    let tag = format!(
        "tmp-{}-{}",
        std::process::id(),
        SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    path.with_extension(tag)
}

const PARAMS_MAGIC: &[u8; 4] = b"PBCF";
const IMAGES_MAGIC: &[u8; 4] = b"PBDS";
const CACHE_VERSION: u32 = 1;

/// FNV-1a over the canonical serialization of anything serde can encode;
/// used to key cache files and to stamp result rows.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable config");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}

pub fn params_cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("params-{key}.bin"))
}

pub fn images_cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("dataset-{key}.bin"))
}

pub fn save_params(path: &Path, values: &[f64]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = scratch_path(path);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(PARAMS_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    std::fs::rename(&tmp, path)
}

pub fn load_params(path: &Path) -> io::Result<Option<Vec<f64>>> {
    let mut bytes = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    }
    if bytes.len() < 16 || &bytes[..4] != PARAMS_MAGIC {
        return Ok(None);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Ok(None);
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + len * 8 {
        return Ok(None);
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(values))
}

pub fn save_images(path: &Path, set: &ImageSet) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = scratch_path(path);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(IMAGES_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(&(set.width as u32).to_le_bytes())?;
        f.write_all(&(set.height as u32).to_le_bytes())?;
        f.write_all(&(set.len() as u64).to_le_bytes())?;
        for &l in &set.labels {
            f.write_all(&[l as u8])?;
        }
        let mut buf = Vec::with_capacity(set.len() * set.width * set.height * 8);
        for img in &set.images {
            for v in img {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&buf)?;
    }
    std::fs::rename(&tmp, path)
}

pub fn load_images(path: &Path) -> io::Result<Option<ImageSet>> {
    let mut bytes = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    }
    if bytes.len() < 24 || &bytes[..4] != IMAGES_MAGIC {
        return Ok(None);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Ok(None);
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let px = width * height;
    let needed = 24 + count + count * px * 8;
    if bytes.len() != needed {
        return Ok(None);
    }
    let labels: Vec<usize> = bytes[24..24 + count].iter().map(|&b| b as usize).collect();
    let mut images = Vec::with_capacity(count);
    let mut offset = 24 + count;
    for _ in 0..count {
        let img: Vec<f64> = bytes[offset..offset + px * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        images.push(img);
        offset += px * 8;
    }
    Ok(Some(ImageSet {
        images,
        labels,
        width,
        height,
    }))
}
