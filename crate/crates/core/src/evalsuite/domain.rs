use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use super::FeatureExtractor;
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::training::{train_classifier, ClassifierConfig};

/// Class index of images from the domain the generators were trained on.
pub const TRAIN_DOMAIN: u32 = 0;
/// Class index of novel-domain images.
pub const NOVEL_DOMAIN: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Images drawn from each domain (capped by the smaller domain, so the
    /// two classes stay balanced).
    pub per_domain: usize,
    /// Fraction of the balanced sample held out for evaluation.
    pub holdout_fraction: f64,
    pub classifier: ClassifierConfig,
}

impl DomainConfig {
    pub fn new(per_domain: usize, epochs: usize, width: i64) -> Self {
        DomainConfig {
            per_domain,
            holdout_fraction: 0.2,
            classifier: ClassifierConfig::new(epochs, width),
        }
    }
}

/// Binary train-domain vs novel-domain classifier with its held-out errors.
#[derive(Debug)]
pub struct DomainClassifier {
    pub classifier: Classifier,
    pub heldout_accuracy: f64,
    /// Percent of held-out training-domain images assigned to the novel domain.
    pub train_domain_error: f64,
    /// Percent of held-out novel-domain images assigned to the training
    /// domain.
    pub novel_domain_error: f64,
    pub per_domain: usize,
}

fn labeled(batch: &ImageBatch, label: u32) -> Result<ImageBatch> {
    batch.clone().with_labels(Some(vec![label; batch.len()]))
}

fn sample(batch: &ImageBatch, n: usize, rng: &mut ChaCha8Rng) -> ImageBatch {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    batch.select(&idx)
}

pub fn train_domain_classifier(train_domain: &ImageBatch, novel: &ImageBatch, cfg: &DomainConfig) -> Result<DomainClassifier> {
    let per = cfg.per_domain.min(train_domain.len()).min(novel.len());
    let holdout = ((per as f64) * cfg.holdout_fraction).round() as usize;
    if per < 2 || holdout == 0 || holdout >= per {
        return Err(Error::InvalidArgument(format!(
            "domain classifier needs more images (balanced size {per}, holdout {holdout})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.classifier.seed ^ 0xd0_3a17);
    let t = labeled(&sample(train_domain, per, &mut rng), TRAIN_DOMAIN)?;
    let v = labeled(&sample(novel, per, &mut rng), NOVEL_DOMAIN)?;
    let fit = t.slice(holdout, per).concat(&v.slice(holdout, per))?;
    let (held_t, held_v) = (t.slice(0, holdout), v.slice(0, holdout));
    let (classifier, _) = train_classifier(&fit, 2, &cfg.classifier, None)?;
    let pct = |batch: &ImageBatch, wrong: u32| -> Result<f64> {
        let pred = classifier.predict(batch)?;
        Ok(100.0 * pred.iter().filter(|&&p| p == wrong).count() as f64 / pred.len() as f64)
    };
    let train_domain_error = pct(&held_t, NOVEL_DOMAIN)?;
    let novel_domain_error = pct(&held_v, TRAIN_DOMAIN)?;
    Ok(DomainClassifier {
        heldout_accuracy: 1.0 - (train_domain_error + novel_domain_error) / 200.0,
        classifier,
        train_domain_error,
        novel_domain_error,
        per_domain: per,
    })
}

/// Percent of `generated` assigned to the training domain.
pub fn misclassification_rate(clf: &DomainClassifier, generated: &ImageBatch) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("misclassification rate of an empty set".into()));
    }
    let pred = clf.classifier.predict(generated)?;
    let hits = pred.iter().filter(|&&p| p == TRAIN_DOMAIN).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

impl FeatureExtractor for DomainClassifier {
    fn id(&self) -> String {
        format!(
            "proxy-domain-classifier/{}-w{}",
            self.classifier.arch(),
            self.classifier.width()
        )
    }

    fn features(&self, batch: &ImageBatch) -> Result<Tensor> {
        self.classifier.features(batch, 256)
    }
}
