//! Reconstruction error, FID, domain misclassification, noise analysis and
//! the hallucination experiment.

mod domain;
pub mod fid;
mod hallucination;
mod noise;

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{Device, Kind, Tensor};

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::sampler::{decode_mixtures, interior_alphas, sample_from_noise};

pub use domain::{misclassification_rate, train_domain_classifier, DomainClassifier, DomainConfig, NOVEL_DOMAIN, TRAIN_DOMAIN};
pub use fid::{fid, GaussianStats};
pub use hallucination::{hallucination_experiment, mean_ci95, HallucinationConfig, HallucinationRow, Regime};
pub use noise::{default_resolutions, noise_analysis, noise_images, NoiseConfig, NoiseCurve, NoisePoint};

/// Images reconstructed per encoder/generator call.
pub const EVAL_CHUNK: usize = 256;

/// Per-image reconstruction error: mean squared pixel difference with
/// pixels on the [0, 1] scale, multiplied by 255.
pub fn pixel_error_255(x: &[f32], y: &[f32]) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) * 0.5;
            d * d
        })
        .sum();
    255.0 * sum / x.len().max(1) as f64
}

/// Reconstruction error of every image in `data`.
pub fn per_image_recon_error(bundle: &ModelBundle, data: &ImageBatch) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let chunk = data.slice(start, (start + EVAL_CHUNK).min(data.len()));
        let rec = bundle.reconstruct(&chunk)?;
        out.extend((0..chunk.len()).map(|i| pixel_error_255(chunk.image_slice(i), rec.image_slice(i))));
    }
    Ok(out)
}

/// Mean reconstruction error over `data`, see [`pixel_error_255`].
pub fn recon_error(bundle: &ModelBundle, data: &ImageBatch) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("reconstruction error of an empty split".into()));
    }
    let errs = per_image_recon_error(bundle, data)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// One metric run, as written to report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    /// Half-width of the 95% confidence interval, when runs were repeated.
    pub ci95: Option<f64>,
    pub n_real: usize,
    pub n_generated: usize,
    pub extractor: Option<String>,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "metric,value,ci95,n_real,n_generated,extractor,seed,config_digest";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.metric,
            self.value,
            self.ci95.map(|c| c.to_string()).unwrap_or_default(),
            self.n_real,
            self.n_generated,
            self.extractor.as_deref().unwrap_or(""),
            self.seed,
            self.config_digest
        )
    }
}

/// Short stable digest of any serializable configuration.
pub fn config_digest(value: &impl Serialize) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&json)[..8]))
}

/// Maps images to feature vectors for FID.
pub trait FeatureExtractor {
    /// Identifier recorded in every report, distinguishing proxy features
    /// from the standard embedding.
    fn id(&self) -> String;
    /// `[n, d]` features.
    fn features(&self, batch: &ImageBatch) -> Result<Tensor>;
}

/// File name expected for the standard embedding network.
pub const INCEPTION_FILE: &str = "inception_pool3.pt";

/// A TorchScript module mapping `[n, 3, 299, 299]` images in [-1, 1] to
/// pool3 features.
pub struct TorchScriptExtractor {
    module: tch::CModule,
    id: String,
}

impl TorchScriptExtractor {
    /// Loads `dir/inception_pool3.pt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INCEPTION_FILE);
        if !path.is_file() {
            return Err(Error::ExtractorUnavailable(format!(
                "{} not found; export the pool3 Inception network as TorchScript (input [n, 3, 299, 299] in [-1, 1], \
                 output [n, 2048]) to that path, or use the proxy extractor and label results accordingly",
                path.display()
            )));
        }
        Ok(TorchScriptExtractor {
            module: tch::CModule::load(&path)?,
            id: "inception-pool3".into(),
        })
    }
}

impl FeatureExtractor for TorchScriptExtractor {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn features(&self, batch: &ImageBatch) -> Result<Tensor> {
        let mut outs = Vec::new();
        for start in (0..batch.len()).step_by(64) {
            let x = batch.slice(start, (start + 64).min(batch.len())).to_tensor(Device::Cpu);
            let x = if x.size()[1] == 1 { x.repeat([1, 3, 1, 1]) } else { x };
            let x = x.upsample_bilinear2d([299, 299], false, None, None);
            outs.push(tch::no_grad(|| self.module.forward_ts(&[x]))?.to_kind(Kind::Float).flatten(1, -1));
        }
        Ok(Tensor::cat(&outs, 0))
    }
}

/// Generated-image protocol for FID and misclassification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidProtocol {
    pub n_generated: usize,
    pub points_per_path: usize,
    pub seed: u64,
}

impl Default for FidProtocol {
    fn default() -> Self {
        FidProtocol {
            n_generated: 5000,
            points_per_path: 3,
            seed: 0,
        }
    }
}

/// Random seed pairs drawn from `data`: two distinct images of one class
/// when labels are present, any two distinct images otherwise.
pub fn seed_pairs(data: &ImageBatch, count: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let groups: Vec<Vec<usize>> = match data.labels() {
        Some(labels) => {
            let mut by_class = std::collections::BTreeMap::<u32, Vec<usize>>::new();
            for (i, &l) in labels.iter().enumerate() {
                by_class.entry(l).or_default().push(i);
            }
            by_class.into_values().collect()
        }
        None => vec![(0..data.len()).collect()],
    };
    let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| g.len() >= 2).collect();
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no class has two images to interpolate".into()));
    }
    Ok((0..count)
        .map(|_| {
            let g = groups.choose(rng).expect("non-empty");
            let pick = rand::seq::index::sample(rng, g.len(), 2);
            (g[pick.index(0)], g[pick.index(1)])
        })
        .collect())
}

/// Images for the FID protocol: interior points of interpolation paths
/// between same-class seed pairs of `novel`, or noise samples for models
/// without an encoder.
pub fn protocol_images(bundle: &ModelBundle, novel: &ImageBatch, protocol: &FidProtocol, rng: &mut impl Rng) -> Result<ImageBatch> {
    let n = protocol.n_generated;
    if !bundle.variant().has_encoder() {
        return sample_from_noise(bundle, n, rng);
    }
    let points = protocol.points_per_path.max(1);
    let paths = n.div_ceil(points);
    let pairs = seed_pairs(novel, paths, rng)?;
    let mut codes = Vec::new();
    for start in (0..novel.len()).step_by(EVAL_CHUNK) {
        codes.push(bundle.encode(&novel.slice(start, (start + EVAL_CHUNK).min(novel.len())))?);
    }
    let codes = Tensor::cat(&codes, 0);
    let alphas = interior_alphas(points);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(a, b) in &pairs {
        for &alpha in &alphas {
            left.push(a);
            right.push(b);
            weights.push(alpha);
        }
    }
    left.truncate(n);
    right.truncate(n);
    weights.truncate(n);
    decode_mixtures(bundle, &codes, &left, &right, &weights)
}

/// FID between the feature distributions of two image sets.
pub fn fid_between(extractor: &dyn FeatureExtractor, real: &ImageBatch, generated: &ImageBatch) -> Result<f64> {
    let a = GaussianStats::from_tensor(&extractor.features(real)?)?;
    let b = GaussianStats::from_tensor(&extractor.features(generated)?)?;
    fid(&a, &b)
}

/// Runs the FID protocol for `bundle` against the novel split.
pub fn fid_protocol(
    bundle: &ModelBundle,
    novel: &ImageBatch,
    extractor: &dyn FeatureExtractor,
    protocol: &FidProtocol,
    rng: &mut impl Rng,
) -> Result<EvalReport> {
    let generated = protocol_images(bundle, novel, protocol, rng)?;
    let value = fid_between(extractor, novel, &generated)?;
    Ok(EvalReport {
        metric: format!("fid/{}", bundle.variant()),
        value,
        ci95: None,
        n_real: novel.len(),
        n_generated: generated.len(),
        extractor: Some(extractor.id()),
        seed: protocol.seed,
        config_digest: config_digest(&(bundle.spec(), protocol))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::letters::generate_letters;
    use crate::models::{ArchId, ModelSpec, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn error_scale_and_partition_invariance() {
        let white = vec![1.0f32; 4];
        let black = vec![-1.0f32; 4];
        assert_eq!(pixel_error_255(&white, &white), 0.0);
        assert_eq!(pixel_error_255(&white, &black), 255.0);
        let b = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, Variant::Ae).with_width(4), 0).unwrap();
        let data = generate_letters(8, 2, &Default::default());
        let whole = recon_error(&b, &data).unwrap();
        let parts: Vec<f64> = (0..data.len())
            .step_by(37)
            .flat_map(|s| per_image_recon_error(&b, &data.slice(s, (s + 37).min(data.len()))).unwrap())
            .collect();
        let split = parts.iter().sum::<f64>() / parts.len() as f64;
        assert!((whole - split).abs() < 1e-6 * whole);
    }

    #[test]
    fn protocol_counts_and_pairs() {
        let b = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, Variant::AugIntAe).with_width(4), 0).unwrap();
        let novel = generate_letters(3, 2, &Default::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let protocol = FidProtocol {
            n_generated: 100,
            points_per_path: 3,
            seed: 0,
        };
        assert_eq!(protocol_images(&b, &novel, &protocol, &mut rng).unwrap().len(), 100);
        let labels = novel.labels().unwrap();
        for (a, c) in seed_pairs(&novel, 50, &mut rng).unwrap() {
            assert_ne!(a, c);
            assert_eq!(labels[a], labels[c]);
        }
        let w = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, Variant::WganGp).with_width(4), 0).unwrap();
        assert_eq!(protocol_images(&w, &novel, &protocol, &mut rng).unwrap().len(), 100);
    }

    #[test]
    fn missing_inception_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(TorchScriptExtractor::load(dir.path()), Err(Error::ExtractorUnavailable(_))));
    }

    #[test]
    fn csv_row_matches_header() {
        let r = EvalReport {
            metric: "fid/ae".into(),
            value: 1.5,
            ci95: None,
            n_real: 10,
            n_generated: 20,
            extractor: Some("proxy".into()),
            seed: 3,
            config_digest: "ab".into(),
        };
        assert_eq!(r.csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }
}
