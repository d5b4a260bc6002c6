//! Binary archive of preprocessed splits.
//!
//! Layout: `AUGCACHE` magic, little-endian u32 header length, JSON header
//! (`dtype`, `shape`, `value_range`, `spec_hash`, `has_labels`), then the
//! pixel payload quantized to u8 (`round((v + 1) * 127.5)`), then optional
//! little-endian u32 labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::batch::{denormalize_u8, normalize_u8, ImageBatch, ImageShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AUGCACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub dtype: String,
    pub shape: [usize; 4],
    pub value_range: [f32; 2],
    pub spec_hash: String,
    pub has_labels: bool,
}

pub fn write_cache(path: &Path, batch: &ImageBatch, spec_hash: &str) -> Result<()> {
    let s = batch.shape();
    let header = CacheHeader {
        dtype: "u8".into(),
        shape: [batch.len(), s.channels, s.height, s.width],
        value_range: [-1.0, 1.0],
        spec_hash: spec_hash.into(),
        has_labels: batch.labels().is_some(),
    };
    let h = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + h.len() + batch.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend(batch.data().iter().map(|&v| denormalize_u8(v)));
    if let Some(labels) = batch.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a cache file; returns `Ok(None)` when the file was written for a
/// different preprocessing spec.
pub fn read_cache(path: &Path, spec_hash: &str) -> Result<Option<ImageBatch>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a cache archive", path.display())));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: CacheHeader = serde_json::from_slice(
        bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Format("truncated cache header".into()))?,
    )?;
    if header.spec_hash != spec_hash {
        return Ok(None);
    }
    if header.dtype != "u8" {
        return Err(Error::Format(format!("unsupported cache dtype {}", header.dtype)));
    }
    let [n, c, h, w] = header.shape;
    let npix = n * c * h * w;
    let body = &bytes[12 + hlen..];
    let nlab = if header.has_labels { 4 * n } else { 0 };
    if body.len() != npix + nlab {
        return Err(Error::Format(format!("{}: truncated cache payload", path.display())));
    }
    let data = body[..npix].iter().map(|&v| normalize_u8(v)).collect();
    let labels = header.has_labels.then(|| {
        body[npix..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    });
    Ok(Some(ImageBatch::new(ImageShape::new(c, h, w), data, labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let shape = ImageShape::new(1, 3, 3);
        let data: Vec<f32> = (0..18).map(|i| (i as f32 / 17.0) * 2.0 - 1.0).collect();
        let b = ImageBatch::new(shape, data, Some(vec![4, 9])).unwrap();
        write_cache(&p, &b, "abc").unwrap();
        let r = read_cache(&p, "abc").unwrap().unwrap();
        assert_eq!(r.labels(), b.labels());
        for (x, y) in r.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1.0 / 255.0 + 1e-6);
        }
        assert!(read_cache(&p, "other").unwrap().is_none());
    }
}
