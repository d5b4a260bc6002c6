use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};

/// Channel count and spatial resolution shared by every image in a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dims(&self) -> [i64; 3] {
        [self.channels as i64, self.height as i64, self.width as i64]
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A single image stored channel-major with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub shape: ImageShape,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(shape: ImageShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values for image shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        let idx = (c * self.shape.height + y) * self.shape.width + x;
        &mut self.data[idx]
    }
}

/// A batch of images (count x channels x height x width) in [-1, 1] with
/// optional per-image class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    shape: ImageShape,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl ImageBatch {
    pub fn new(shape: ImageShape, data: Vec<f32>, labels: Option<Vec<u32>>) -> Result<Self> {
        if shape.numel() == 0 || data.len() % shape.numel() != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {shape} images",
                data.len()
            )));
        }
        let count = data.len() / shape.numel();
        if let Some(labels) = &labels {
            if labels.len() != count {
                return Err(Error::Shape(format!(
                    "{} labels for {count} images",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            shape,
            data,
            labels,
        })
    }

    pub fn empty(shape: ImageShape) -> Self {
        Self {
            shape,
            data: Vec::new(),
            labels: None,
        }
    }

    pub fn from_images(shape: ImageShape, images: &[Image], labels: Option<Vec<u32>>) -> Result<Self> {
        let mut data = Vec::with_capacity(images.len() * shape.numel());
        for img in images {
            if img.shape != shape {
                return Err(Error::Shape(format!("image {} in batch of {shape}", img.shape)));
            }
            data.extend_from_slice(&img.data);
        }
        Self::new(shape, data, labels)
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.shape.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn image_slice(&self, i: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        Image {
            shape: self.shape,
            data: self.image_slice(i).to_vec(),
        }
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn set_image(&mut self, i: usize, img: &Image) {
        let n = self.shape.numel();
        self.data[i * n..(i + 1) * n].copy_from_slice(&img.data);
    }

    /// Gathers the given rows into a new batch (labels follow).
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.shape.numel();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self {
            shape: self.shape,
            data,
            labels,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        let indices: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&indices)
    }

    pub fn concat(&self, other: &ImageBatch) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self {
            shape: self.shape,
            data,
            labels,
        })
    }

    pub fn with_labels(mut self, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::Shape(format!("{} labels for {} images", l.len(), self.len())));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.shape.numel())
    }

    /// Copies the batch into a float tensor of shape [N, C, H, W].
    pub fn to_tensor(&self, device: Device) -> Tensor {
        let [c, h, w] = self.shape.dims();
        Tensor::from_slice(&self.data)
            .view([self.len() as i64, c, h, w])
            .to_device(device)
    }

    /// Builds a batch from a [N, C, H, W] tensor.
    pub fn from_tensor(t: &Tensor, labels: Option<Vec<u32>>) -> Result<Self> {
        let size = t.size();
        if size.len() != 4 {
            return Err(Error::Shape(format!("expected rank-4 tensor, got {size:?}")));
        }
        let shape = ImageShape::new(size[1] as usize, size[2] as usize, size[3] as usize);
        let flat = t
            .detach()
            .to_device(Device::Cpu)
            .to_kind(Kind::Float)
            .contiguous()
            .view([-1]);
        let data = Vec::<f32>::try_from(&flat)?;
        if data.is_empty() {
            return Ok(Self::empty(shape));
        }
        Self::new(shape, data, labels)
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Maps an 8-bit intensity to [-1, 1].
#[inline]
pub fn normalize_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Maps a [-1, 1] value back to the nearest 8-bit intensity.
#[inline]
pub fn denormalize_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_unit_range() {
        assert_eq!(normalize_u8(255), 1.0);
        assert_eq!(normalize_u8(0), -1.0);
    }

    #[test]
    fn u8_round_trip_is_exact() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_u8(normalize_u8(v)), v);
        }
    }

    #[test]
    fn label_count_must_match() {
        let shape = ImageShape::new(1, 2, 2);
        assert!(ImageBatch::new(shape, vec![0.0; 8], Some(vec![1])).is_err());
        assert!(ImageBatch::new(shape, vec![0.0; 7], None).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let shape = ImageShape::new(1, 2, 3);
        let b = ImageBatch::new(shape, (0..12).map(|v| v as f32 / 12.0).collect(), None).unwrap();
        let t = b.to_tensor(Device::Cpu);
        assert_eq!(t.size(), vec![2, 1, 2, 3]);
        assert_eq!(ImageBatch::from_tensor(&t, None).unwrap(), b);
    }
}
