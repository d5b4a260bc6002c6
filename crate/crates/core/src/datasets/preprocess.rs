//! Conversion of decoded raster images into pipeline-ready [-1, 1] tensors.

use serde::{Deserialize, Serialize};

use super::batch::{normalize_u8, Image, ImageBatch, ImageShape};
use crate::error::{Error, Result};

/// Decoded 8-bit image, interleaved (height x width x channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * channels || !(channels == 1 || channels == 3) {
            return Err(Error::Shape(format!(
                "{} bytes for {width}x{height}x{channels} raster",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FramingMode {
    /// Use the full frame (resized if needed).
    Full,
    /// Crop the largest centered square before resizing.
    CenterCrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target: ImageShape,
    pub framing: FramingMode,
    /// Invert intensities so strokes are bright on a dark background.
    pub invert: bool,
    /// Threshold gray images to pure ink/background at mid-gray.
    pub binarize: bool,
}

impl PreprocessSpec {
    pub fn handwritten() -> Self {
        Self {
            target: ImageShape::new(1, 28, 28),
            framing: FramingMode::Full,
            invert: false,
            binarize: false,
        }
    }

    /// Omniglot ships dark strokes on white; polarity is flipped to match MNIST.
    pub fn omniglot() -> Self {
        Self {
            invert: true,
            binarize: true,
            ..Self::handwritten()
        }
    }

    pub fn celeba() -> Self {
        Self {
            target: ImageShape::new(3, 128, 128),
            framing: FramingMode::CenterCrop,
            invert: false,
            binarize: false,
        }
    }

    pub fn cifar() -> Self {
        Self {
            target: ImageShape::new(3, 64, 64),
            framing: FramingMode::Full,
            invert: false,
            binarize: false,
        }
    }

    /// Stable digest used to key on-disk caches.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn apply_raw(&self, raw: &RawImage) -> Result<Image> {
        let t = self.target;
        // Promote to float planes in [0, 1], channel-major.
        let mut planes = vec![0f32; raw.channels * raw.width * raw.height];
        let hw = raw.width * raw.height;
        for (i, px) in raw.pixels.chunks_exact(raw.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                let mut v = v as f32 / 255.0;
                if self.binarize {
                    v = if v >= 0.5 { 1.0 } else { 0.0 };
                }
                if self.invert {
                    v = 1.0 - v;
                }
                planes[c * hw + i] = v;
            }
        }
        let (mut w, mut h) = (raw.width, raw.height);
        if self.framing == FramingMode::CenterCrop && w != h {
            let side = w.min(h);
            let (x0, y0) = ((w - side) / 2, (h - side) / 2);
            let mut cropped = vec![0f32; raw.channels * side * side];
            for c in 0..raw.channels {
                for y in 0..side {
                    let src = c * hw + (y + y0) * w + x0;
                    let dst = (c * side + y) * side;
                    cropped[dst..dst + side].copy_from_slice(&planes[src..src + side]);
                }
            }
            planes = cropped;
            w = side;
            h = side;
        }
        let planes = convert_channels(&planes, raw.channels, t.channels, w * h);
        let resized = resize_planes(&planes, t.channels, h, w, t.height, t.width);
        let data = resized.into_iter().map(|v| v.clamp(0.0, 1.0) * 2.0 - 1.0).collect();
        Image::new(t, data)
    }

    /// Applies this preprocessing to an already-normalized batch. A batch that already
    /// has the target shape is returned unchanged apart from range clamping.
    pub fn apply_batch(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        let s = batch.shape();
        let t = self.target;
        if s == t {
            let data = batch.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            return ImageBatch::new(t, data, batch.labels().map(<[u32]>::to_vec));
        }
        let mut out = Vec::with_capacity(batch.len() * t.numel());
        for img in batch.iter() {
            let unit: Vec<f32> = img.iter().map(|v| (v + 1.0) * 0.5).collect();
            let planes = convert_channels(&unit, s.channels, t.channels, s.height * s.width);
            let r = resize_planes(&planes, t.channels, s.height, s.width, t.height, t.width);
            out.extend(r.into_iter().map(|v| v.clamp(0.0, 1.0) * 2.0 - 1.0));
        }
        ImageBatch::new(t, out, batch.labels().map(<[u32]>::to_vec))
    }
}

fn convert_channels(planes: &[f32], from: usize, to: usize, hw: usize) -> Vec<f32> {
    match (from, to) {
        (a, b) if a == b => planes.to_vec(),
        (1, 3) => planes.iter().chain(planes).chain(planes).copied().collect(),
        (3, 1) => (0..hw)
            .map(|i| 0.299 * planes[i] + 0.587 * planes[hw + i] + 0.114 * planes[2 * hw + i])
            .collect(),
        _ => unreachable!("channel counts are validated to be 1 or 3"),
    }
}

/// Resizes channel-major planes. Downscaling averages the covered source area,
/// upscaling interpolates bilinearly with half-pixel centers.
pub fn resize_planes(src: &[f32], channels: usize, sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f32> {
    if sh == th && sw == tw {
        return src.to_vec();
    }
    let mut out = vec![0f32; channels * th * tw];
    let wx = axis_weights(sw, tw);
    let wy = axis_weights(sh, th);
    for c in 0..channels {
        let plane = &src[c * sh * sw..(c + 1) * sh * sw];
        for (oy, ry) in wy.iter().enumerate() {
            for (ox, rx) in wx.iter().enumerate() {
                let mut acc = 0f32;
                for &(iy, fy) in ry {
                    for &(ix, fx) in rx {
                        acc += fy * fx * plane[iy * sw + ix];
                    }
                }
                out[(c * th + oy) * tw + ox] = acc;
            }
        }
    }
    out
}

fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            if scale > 1.0 {
                let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut w = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        w.push((i, (cover / scale) as f32));
                    }
                    i += 1;
                }
                w
            } else {
                let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let f = (p - i0 as f64) as f32;
                if i1 == i0 || f == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            }
        })
        .collect()
}

/// Converts an 8-bit gray raster that already has the target size without
/// any resampling.
pub fn gray_u8_to_image(pixels: &[u8], side: usize) -> Image {
    Image {
        shape: ImageShape::new(1, side, side),
        data: pixels.iter().map(|&v| normalize_u8(v)).collect(),
    }
}
