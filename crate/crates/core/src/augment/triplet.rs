use rand::Rng;

use super::{apply, interp_params, sample_alpha, sample_params, AugmentParams, AugmentRangeSpec};
use crate::datasets::{Image, ImageBatch};
use crate::error::Result;

/// Two augmented views of one image and the view produced by their
/// alpha-mixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub a: Image,
    pub b: Image,
    pub c: Image,
    pub alpha: f64,
    pub params_a: AugmentParams,
    pub params_b: AugmentParams,
    pub params_c: AugmentParams,
}

pub fn make_triplet(x: &Image, spec: &AugmentRangeSpec, rng: &mut impl Rng) -> Triplet {
    let p1 = sample_params(spec, rng);
    let p2 = sample_params(spec, rng);
    let alpha = sample_alpha(rng);
    triplet_from(x, spec, p1, p2, alpha)
}

/// Like [`make_triplet`] but with a caller-chosen mixing weight.
pub fn make_triplet_with_alpha(x: &Image, spec: &AugmentRangeSpec, alpha: f64, rng: &mut impl Rng) -> Result<Triplet> {
    let p1 = sample_params(spec, rng);
    let p2 = sample_params(spec, rng);
    // Validate alpha before doing any image work.
    interp_params(&p1, &p2, alpha)?;
    Ok(triplet_from(x, spec, p1, p2, alpha))
}

fn triplet_from(x: &Image, spec: &AugmentRangeSpec, p1: AugmentParams, p2: AugmentParams, alpha: f64) -> Triplet {
    let pc = interp_params(&p1, &p2, alpha).expect("parameters from one spec");
    let border = spec.border();
    Triplet {
        a: apply(x, &p1, border),
        b: apply(x, &p2, border),
        c: apply(x, &pc, border),
        alpha,
        params_a: p1,
        params_b: p2,
        params_c: pc,
    }
}

/// Triplets for a whole batch, stacked per role.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub a: ImageBatch,
    pub b: ImageBatch,
    pub c: ImageBatch,
    pub alpha: Vec<f64>,
}

pub fn make_triplet_batch(batch: &ImageBatch, spec: &AugmentRangeSpec, rng: &mut impl Rng) -> TripletBatch {
    let shape = batch.shape();
    let n = batch.len();
    let mut a = Vec::with_capacity(n * shape.numel());
    let mut b = Vec::with_capacity(n * shape.numel());
    let mut c = Vec::with_capacity(n * shape.numel());
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        let t = make_triplet(&batch.image(i), spec, rng);
        a.extend_from_slice(&t.a.data);
        b.extend_from_slice(&t.b.data);
        c.extend_from_slice(&t.c.data);
        alpha.push(t.alpha);
    }
    let labels = batch.labels().map(<[u32]>::to_vec);
    let build = |d| ImageBatch::new(shape, d, labels.clone()).expect("triplet batch shape");
    TripletBatch {
        a: build(a),
        b: build(b),
        c: build(c),
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{params_between, AugmentSubset};
    use crate::datasets::ImageShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn glyph() -> Image {
        let mut img = Image::filled(ImageShape::new(1, 28, 28), -1.0);
        for y in 6..22 {
            *img.at_mut(0, y, 13) = 1.0;
            *img.at_mut(0, y, 14) = 0.6;
        }
        img
    }

    #[test]
    fn alpha_endpoints_reproduce_views() {
        let spec = AugmentRangeSpec::handwritten();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = make_triplet_with_alpha(&glyph(), &spec, 1.0, &mut rng).unwrap();
        assert_eq!(t.c, t.a);
        let t = make_triplet_with_alpha(&glyph(), &spec, 0.0, &mut rng).unwrap();
        assert_eq!(t.c, t.b);
        assert!(make_triplet_with_alpha(&glyph(), &spec, 1.5, &mut rng).is_err());
    }

    #[test]
    fn disabled_augmentations_return_the_input() {
        let spec = AugmentRangeSpec::handwritten().with_subset(AugmentSubset::None);
        let x = glyph();
        let t = make_triplet(&x, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(t.a, x);
        assert_eq!(t.b, x);
        assert_eq!(t.c, x);
    }

    #[test]
    fn mixed_params_lie_between_endpoints() {
        let spec = AugmentRangeSpec::cifar();
        let x = Image::filled(ImageShape::new(3, 8, 8), 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t = make_triplet(&x, &spec, &mut rng);
            assert!((0.0..=1.0).contains(&t.alpha));
            assert!(params_between(&t.params_c, &t.params_a, &t.params_b));
        }
    }

    #[test]
    fn batch_keeps_labels_and_shape() {
        let shape = ImageShape::new(1, 28, 28);
        let b = ImageBatch::from_images(shape, &[glyph(), glyph()], Some(vec![3, 4])).unwrap();
        let t = make_triplet_batch(&b, &AugmentRangeSpec::handwritten(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.c.len(), 2);
        assert_eq!(t.c.labels(), Some(&[3, 4][..]));
        assert_eq!(t.alpha.len(), 2);
    }
}
