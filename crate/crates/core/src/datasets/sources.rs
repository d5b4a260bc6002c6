//! On-disk dataset formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::batch::{Image, ImageBatch, ImageShape};
use super::idx::{read_idx, transpose_images};
use super::preprocess::{gray_u8_to_image, PreprocessSpec, RawImage};
use crate::error::{Error, Result};

/// Finds `name` or `name.gz` inside `dir`.
pub fn find_file(dir: &Path, name: &str) -> Option<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Some(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    gz.exists().then_some(gz)
}

/// Loads an IDX image/label file pair of 28x28 glyphs.
pub fn load_idx_pair(images: &Path, labels: &Path, transpose: bool) -> Result<(ImageBatch, Vec<u32>)> {
    let mut imgs = read_idx(images)?;
    let labs = read_idx(labels)?;
    if imgs.dims.len() != 3 || imgs.dims[1] != 28 || imgs.dims[2] != 28 {
        return Err(Error::Format(format!("expected Nx28x28 images, got {:?}", imgs.dims)));
    }
    if labs.dims.len() != 1 || labs.dims[0] != imgs.dims[0] {
        return Err(Error::Format(format!(
            "{} labels for {} images",
            labs.dims.first().copied().unwrap_or(0),
            imgs.dims[0]
        )));
    }
    if transpose {
        transpose_images(&mut imgs.data, 28);
    }
    let shape = ImageShape::new(1, 28, 28);
    let mut data = Vec::with_capacity(imgs.data.len());
    for chunk in imgs.data.chunks_exact(784) {
        data.extend(gray_u8_to_image(chunk, 28).data);
    }
    let labels: Vec<u32> = labs.data.iter().map(|&v| v as u32).collect();
    let batch = ImageBatch::new(shape, data, Some(labels.clone()))?;
    Ok((batch, labels))
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

/// Reads CIFAR binary batches. `label_bytes` is 1 for CIFAR-10 and 2 for
/// CIFAR-100 (coarse, fine); the last label byte is used.
pub fn load_cifar_bin(files: &[PathBuf], label_bytes: usize, spec: &PreprocessSpec) -> Result<ImageBatch> {
    let record = label_bytes + 3072;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = fs::read(f)?;
        if bytes.len() % record != 0 {
            return Err(Error::Format(format!("{}: not a whole number of CIFAR records", f.display())));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[label_bytes - 1] as u32);
            let planes = &rec[label_bytes..];
            let mut interleaved = Vec::with_capacity(3072);
            for i in 0..1024 {
                interleaved.extend_from_slice(&[planes[i], planes[1024 + i], planes[2048 + i]]);
            }
            images.push(spec.apply_raw(&RawImage::new(32, 32, 3, interleaved)?)?);
        }
    }
    ImageBatch::from_images(spec.target, &images, Some(labels))
}

/// Parses `list_attr_celeba.txt`, returning file name -> value of `attribute`.
pub fn parse_celeba_attributes(text: &str, attribute: &str) -> Result<Vec<(String, bool)>> {
    let mut lines = text.lines();
    let _count = lines.next().ok_or_else(|| Error::Format("empty attribute file".into()))?;
    let header = lines.next().ok_or_else(|| Error::Format("missing attribute header".into()))?;
    let col = header
        .split_whitespace()
        .position(|a| a == attribute)
        .ok_or_else(|| Error::Format(format!("attribute `{attribute}` not in header")))?;
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split_whitespace();
            let name = parts.next().unwrap_or_default().to_string();
            let v = parts
                .nth(col)
                .ok_or_else(|| Error::Format(format!("short attribute row for {name}")))?;
            Ok((name, v == "1"))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FolderReport {
    pub loaded: usize,
    pub skipped: usize,
    pub class_names: Vec<String>,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

pub fn decode_image_file(path: &Path) -> Result<RawImage> {
    let img = image::open(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_dynamic(img)
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<RawImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::CorruptImage {
        path: PathBuf::from("<memory>"),
        reason: e.to_string(),
    })?;
    decode_dynamic(img)
}

fn decode_dynamic(img: image::DynamicImage) -> Result<RawImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        RawImage::new(w, h, 3, img.to_rgb8().into_raw())
    } else {
        RawImage::new(w, h, 1, img.to_luma8().into_raw())
    }
}

/// Imports a folder of images. Files directly inside `dir` get label 0;
/// otherwise every sub-folder (recursively, by relative path) is one class.
/// Undecodable files are skipped with a warning and counted.
pub fn load_image_folder(dir: &Path, spec: &PreprocessSpec) -> Result<(ImageBatch, FolderReport)> {
    let mut files: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    collect_images(dir, dir, &mut files)?;
    let mut report = FolderReport::default();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class_idx, (class, paths)) in files.into_iter().enumerate() {
        report.class_names.push(class);
        for p in paths {
            match decode_image_file(&p).and_then(|raw| spec.apply_raw(&raw)) {
                Ok(img) => {
                    images.push(img);
                    labels.push(class_idx as u32);
                    report.loaded += 1;
                }
                Err(e) => {
                    tracing::warn!(path = %p.display(), error = %e, "skipping undecodable image");
                    report.skipped += 1;
                }
            }
        }
    }
    if images.is_empty() {
        return Ok((ImageBatch::empty(spec.target), report));
    }
    Ok((ImageBatch::from_images(spec.target, &images, Some(labels))?, report))
}

fn collect_images(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<PathBuf>>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_images(root, &p, out)?;
        } else if is_image_file(&p) {
            let class = dir
                .strip_prefix(root)
                .ok()
                .map(|r| r.to_string_lossy().replace('\\', "/"))
                .unwrap_or_default();
            out.entry(class).or_default().push(p);
        }
    }
    Ok(())
}

/// Decodes a list of files, skipping (and counting) corrupt ones.
pub fn load_files(paths: &[PathBuf], spec: &PreprocessSpec) -> (Vec<Image>, usize) {
    let mut skipped = 0;
    let images = paths
        .iter()
        .filter_map(|p| match decode_image_file(p).and_then(|raw| spec.apply_raw(&raw)) {
            Ok(img) => Some(img),
            Err(e) => {
                tracing::warn!(path = %p.display(), error = %e, "skipping undecodable image");
                skipped += 1;
                None
            }
        })
        .collect();
    (images, skipped)
}
