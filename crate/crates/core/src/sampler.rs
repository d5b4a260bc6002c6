//! Few-shot generation from seed images and interpolation-based data
//! hallucination.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use tch::Tensor;

use crate::augment::sample_alpha;
use crate::datasets::{Image, ImageBatch};
use crate::error::{Error, Result};
use crate::models::{normalize_rows, LatentCode, ModelBundle};

/// Seed images of one novel class with their cached codes.
#[derive(Debug)]
pub struct SeedSet {
    images: ImageBatch,
    codes: Tensor,
}

impl Clone for SeedSet {
    fn clone(&self) -> Self {
        SeedSet {
            images: self.images.clone(),
            codes: self.codes.copy(),
        }
    }
}

impl SeedSet {
    pub fn new(bundle: &ModelBundle, images: ImageBatch) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "few-shot generation needs at least 2 seed images, got {}",
                images.len()
            )));
        }
        let codes = bundle.encode(&images)?;
        Ok(SeedSet { images, codes })
    }

    /// Re-encodes the seeds, e.g. after the checkpoint changed.
    pub fn refresh(&mut self, bundle: &ModelBundle) -> Result<()> {
        self.codes = bundle.encode(&self.images)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &ImageBatch {
        &self.images
    }

    pub fn codes(&self) -> Result<Vec<LatentCode>> {
        LatentCode::from_rows(&self.codes)
    }

    /// Unordered seed pairs `(i, j)` with `i < j`, in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }
}

fn alpha_tensor(alpha: &[f64]) -> Tensor {
    let a: Vec<f32> = alpha.iter().map(|&v| v as f32).collect();
    Tensor::from_slice(&a)
}

fn index_tensor(idx: &[usize]) -> Tensor {
    let v: Vec<i64> = idx.iter().map(|&i| i as i64).collect();
    Tensor::from_slice(&v)
}

/// Rows decoded per generator call.
pub const DECODE_CHUNK: usize = 256;

/// Decodes `alpha`-weighted mixtures of code rows `left[i]` and `right[i]`.
pub fn decode_mixtures(bundle: &ModelBundle, codes: &Tensor, left: &[usize], right: &[usize], alpha: &[f64]) -> Result<ImageBatch> {
    if left.len() != right.len() || left.len() != alpha.len() {
        return Err(Error::InvalidArgument("pair and weight lists differ in length".into()));
    }
    let mut out = ImageBatch::empty(bundle.image_shape());
    for start in (0..left.len()).step_by(DECODE_CHUNK) {
        let end = (start + DECODE_CHUNK).min(left.len());
        let z1 = codes.index_select(0, &index_tensor(&left[start..end]));
        let z2 = codes.index_select(0, &index_tensor(&right[start..end]));
        let z = tch::no_grad(|| bundle.interpolate_t(&z1, &z2, &alpha_tensor(&alpha[start..end])))?;
        out = out.concat(&bundle.decode(&z)?)?;
    }
    Ok(out)
}

/// Unit-norm Gaussian directions, the noise a WGAN-GP generator is trained on.
pub fn sphere_noise(n: usize, dim: i64, rng: &mut impl Rng) -> Tensor {
    let v: Vec<f32> = (0..n as i64 * dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize_rows(&Tensor::from_slice(&v).view([n as i64, dim]))
}

/// `n` images decoded from [`sphere_noise`].
pub fn sample_from_noise(bundle: &ModelBundle, n: usize, rng: &mut impl Rng) -> Result<ImageBatch> {
    let z = sphere_noise(n, bundle.latent_dim(), rng);
    let mut out = ImageBatch::empty(bundle.image_shape());
    for start in (0..n).step_by(DECODE_CHUNK) {
        let len = DECODE_CHUNK.min(n - start) as i64;
        out = out.concat(&bundle.decode(&z.narrow(0, start as i64, len))?)?;
    }
    Ok(out)
}

/// `n` images, each decoded from a uniformly random ordered pair of distinct
/// seeds mixed with a random weight.
pub fn few_shot_generate(bundle: &ModelBundle, seeds: &SeedSet, n: usize, rng: &mut impl Rng) -> Result<ImageBatch> {
    few_shot_generate_with(bundle, seeds, n, rng, sample_alpha)
}

/// Like [`few_shot_generate`] with a caller-supplied weight sampler.
pub fn few_shot_generate_with<R: Rng>(
    bundle: &ModelBundle,
    seeds: &SeedSet,
    n: usize,
    rng: &mut R,
    mut alpha: impl FnMut(&mut R) -> f64,
) -> Result<ImageBatch> {
    let m = seeds.len();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        left.push(i);
        right.push(j);
        alphas.push(alpha(rng));
    }
    decode_mixtures(bundle, &seeds.codes, &left, &right, &alphas)
}

/// Midpoint of every unordered seed pair, in [`SeedSet::pairs`] order.
pub fn midpoints(bundle: &ModelBundle, seeds: &SeedSet) -> Result<ImageBatch> {
    let (left, right): (Vec<usize>, Vec<usize>) = seeds.pairs().into_iter().unzip();
    let alpha = vec![0.5; left.len()];
    decode_mixtures(bundle, &seeds.codes, &left, &right, &alpha)
}

/// `steps` evenly spaced weights from 1 down to 0.
pub fn path_alphas(steps: usize) -> Vec<f64> {
    (0..steps).map(|i| 1.0 - i as f64 / (steps - 1) as f64).collect()
}

/// `points` evenly spaced interior weights, excluding both endpoints.
pub fn interior_alphas(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / (points + 1) as f64).collect()
}

/// Decoded frames from `a` (weight 1) to `b` (weight 0), endpoints included.
pub fn interpolation_path(bundle: &ModelBundle, a: &Image, b: &Image, steps: usize) -> Result<ImageBatch> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("an interpolation path needs at least 2 steps, got {steps}")));
    }
    interpolate_at(bundle, a, b, &path_alphas(steps))
}

/// Decodes the mixtures of `a` and `b` at each weight in `alphas`.
pub fn interpolate_at(bundle: &ModelBundle, a: &Image, b: &Image, alphas: &[f64]) -> Result<ImageBatch> {
    if let Some(&bad) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("alpha {bad} outside [0, 1]")));
    }
    let pair = ImageBatch::from_images(bundle.image_shape(), &[a.clone(), b.clone()], None)?;
    let codes = bundle.encode(&pair)?;
    decode_mixtures(bundle, &codes, &vec![0; alphas.len()], &vec![1; alphas.len()], alphas)
}

/// Pixel-space mixture `alpha * x1 + (1 - alpha) * x2`.
pub fn mixup_pixel(x1: &Image, x2: &Image, alpha: f64) -> Result<Image> {
    if x1.shape != x2.shape {
        return Err(Error::Shape(format!("{} vs {}", x1.shape, x2.shape)));
    }
    if alpha == 1.0 {
        return Ok(x1.clone());
    }
    if alpha == 0.0 {
        return Ok(x2.clone());
    }
    let data = x1
        .data
        .iter()
        .zip(&x2.data)
        .map(|(&a, &b)| (alpha * a as f64 + (1.0 - alpha) * b as f64) as f32)
        .collect();
    Image::new(x1.shape, data)
}

/// Chooses which slots of a labeled batch to replace and a same-class
/// partner for each. A class with a single member in the batch pairs the
/// image with itself.
pub fn hallucination_pairs(labels: &[u32], fraction: f64, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * labels.len() as f64).round() as usize;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let slots = rand::seq::index::sample(rng, labels.len(), count).into_vec();
    Ok(slots
        .into_iter()
        .map(|slot| {
            let members = &by_class[&labels[slot]];
            let others: Vec<usize> = members.iter().copied().filter(|&m| m != slot).collect();
            let partner = others.choose(rng).copied().unwrap_or(slot);
            (slot, partner)
        })
        .collect())
}

/// Replaces `fraction` of a labeled batch with same-class mixtures produced
/// by `mix` (one output per pair, in order). Labels stay in place.
pub fn hallucinate_with(
    batch: &ImageBatch,
    fraction: f64,
    rng: &mut impl Rng,
    mix: impl FnOnce(&ImageBatch, &ImageBatch) -> Result<ImageBatch>,
) -> Result<ImageBatch> {
    let labels = batch
        .labels()
        .ok_or_else(|| Error::InvalidArgument("hallucination needs a labeled batch".into()))?;
    let pairs = hallucination_pairs(labels, fraction, rng)?;
    if pairs.is_empty() {
        return Ok(batch.clone());
    }
    let (slots, partners): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let mixed = mix(&batch.select(&slots), &batch.select(&partners))?;
    let mut out = batch.clone();
    for (k, &slot) in slots.iter().enumerate() {
        out.set_image(slot, &mixed.image(k));
    }
    Ok(out)
}

/// Replaces `fraction` of the batch with latent midpoints of same-class
/// pairs.
pub fn hallucinate_batch(bundle: &ModelBundle, batch: &ImageBatch, fraction: f64, rng: &mut impl Rng) -> Result<ImageBatch> {
    hallucinate_with(batch, fraction, rng, |a, b| {
        let n = a.len();
        let codes = bundle.encode(&a.concat(b)?)?;
        let left: Vec<usize> = (0..n).collect();
        let right: Vec<usize> = (n..2 * n).collect();
        decode_mixtures(bundle, &codes, &left, &right, &vec![0.5; n])
    })
}

/// Pixel-space counterpart of [`hallucinate_batch`] at weight `alpha`.
pub fn mixup_batch(batch: &ImageBatch, fraction: f64, alpha: f64, rng: &mut impl Rng) -> Result<ImageBatch> {
    hallucinate_with(batch, fraction, rng, |a, b| {
        let images = (0..a.len())
            .map(|i| mixup_pixel(&a.image(i), &b.image(i), alpha))
            .collect::<Result<Vec<_>>>()?;
        ImageBatch::from_images(a.shape(), &images, None)
    })
}
