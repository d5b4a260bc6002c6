use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{Device, Tensor};

use super::{per_image_recon_error, recon_error};
use crate::datasets::{ImageBatch, ImageShape};
use crate::error::{Error, Result};
use crate::models::ModelBundle;

/// Noise resolutions for a model of the given side length: powers of two
/// plus the half and full resolution.
pub fn default_resolutions(side: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |r| Some(r * 2)).take_while(|&r| r < side / 2).collect();
    v.push(side / 4);
    v.push(side / 2);
    v.push(side);
    v.sort_unstable();
    v.dedup();
    if side == 28 {
        // 28 = 4 * 7: the quarter resolution replaces 8, which does not
        // divide the side.
        v.retain(|&r| r != 8);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub resolutions: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(side: usize) -> Self {
        NoiseConfig {
            resolutions: default_resolutions(side),
            trials: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub resolution: usize,
    /// Resolution divided by the image side.
    pub frequency: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    pub points: Vec<NoisePoint>,
    /// Reconstruction error on real novel-domain images, for comparison.
    pub novel_error: f64,
}

impl NoiseCurve {
    /// Lowest noise error across frequencies.
    pub fn min_noise_error(&self) -> f64 {
        self.points.iter().map(|p| p.error).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,frequency,error\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.resolution, p.frequency, p.error));
        }
        s.push_str(&format!("novel,,{}\n", self.novel_error));
        s
    }
}

/// `count` uniform noise images drawn at `resolution` per side and channel,
/// scaled up bilinearly to `shape`.
pub fn noise_images(shape: ImageShape, resolution: usize, count: usize, rng: &mut impl Rng) -> Result<ImageBatch> {
    if resolution == 0 || resolution > shape.height.min(shape.width) {
        return Err(Error::InvalidArgument(format!("noise resolution {resolution} outside 1..={}", shape.height)));
    }
    let (c, r) = (shape.channels, resolution);
    let raw: Vec<f32> = (0..count * c * r * r).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let small = Tensor::from_slice(&raw).view([count as i64, c as i64, r as i64, r as i64]);
    let full = if r == shape.height && r == shape.width {
        small
    } else if r == 1 {
        // Bilinear weights summing to one are not exact in floating point.
        small.repeat([1, 1, shape.height as i64, shape.width as i64])
    } else {
        small.upsample_bilinear2d([shape.height as i64, shape.width as i64], false, None, None)
    };
    ImageBatch::from_tensor(&full.to_device(Device::Cpu), None)
}

pub fn noise_analysis(bundle: &ModelBundle, novel: &ImageBatch, cfg: &NoiseConfig) -> Result<NoiseCurve> {
    let shape = bundle.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(cfg.resolutions.len());
    for &res in &cfg.resolutions {
        let noise = noise_images(shape, res, cfg.trials, &mut rng)?;
        let errs = per_image_recon_error(bundle, &noise)?;
        points.push(NoisePoint {
            resolution: res,
            frequency: res as f64 / shape.height as f64,
            error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
        });
    }
    Ok(NoiseCurve {
        points,
        novel_error: recon_error(bundle, novel)?,
    })
}
