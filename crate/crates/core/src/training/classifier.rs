use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Device, Tensor};

use super::{scaled_decay, DEFAULT_BATCH, DEFAULT_LR};
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{ArchId, Classifier};

/// Rewrites each labeled training batch before the optimizer sees it, for
/// example to replace part of it with hallucinated images.
pub type BatchTransform<'a> = dyn FnMut(&ImageBatch, &mut ChaCha8Rng) -> Result<ImageBatch> + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epoch indices (0-based) at which the step size is divided by 10.
    pub lr_decay_epochs: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub width: i64,
}

impl ClassifierConfig {
    pub fn new(epochs: usize, width: i64) -> Self {
        ClassifierConfig {
            epochs,
            lr: DEFAULT_LR,
            lr_decay_epochs: scaled_decay(epochs),
            batch_size: DEFAULT_BATCH,
            seed: 0,
            width,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let cuts = self.lr_decay_epochs.iter().filter(|&&d| epoch >= d).count() as i32;
        self.lr / 10f64.powi(cuts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Mean cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains a softmax classifier with cross-entropy on labeled `data`.
pub fn train_classifier(
    data: &ImageBatch,
    n_classes: usize,
    cfg: &ClassifierConfig,
    mut transform: Option<&mut BatchTransform<'_>>,
) -> Result<(Classifier, ClassifierReport)> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::InvalidArgument("classifier training needs labels".into()))?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {n_classes} classes")));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("classifier epochs and batch size must be positive".into()));
    }
    let arch = ArchId::for_shape(data.shape())?;
    let clf = Classifier::new(arch, cfg.width, n_classes as i64, cfg.seed)?;
    let mut opt = nn::Adam::default().build(clf.vs(), cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1a5);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = ClassifierReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr_at_epoch(epoch));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = data.select(chunk);
            if let Some(t) = transform.as_deref_mut() {
                batch = t(&batch, &mut rng)?;
            }
            let y: Vec<i64> = batch
                .labels()
                .ok_or_else(|| Error::InvalidArgument("batch transform dropped labels".into()))?
                .iter()
                .map(|&l| l as i64)
                .collect();
            let logits = clf.logits_t(&batch.to_tensor(Device::Cpu), true);
            let loss = logits.cross_entropy_for_logits(&Tensor::from_slice(&y));
            opt.backward_step(&loss);
            let l = loss.double_value(&[]);
            if !l.is_finite() {
                return Err(Error::Diverged {
                    step: report.steps,
                    reason: format!("classifier loss {l}"),
                });
            }
            sum += l * y.len() as f64;
            count += y.len();
            report.steps += 1;
        }
        let mean = sum / count.max(1) as f64;
        tracing::debug!(epoch, loss = mean, "classifier epoch");
        report.epoch_losses.push(mean);
    }
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Image, ImageShape};

    /// Two trivially separable classes: dark and bright images.
    fn toy() -> ImageBatch {
        let shape = ImageShape::new(1, 28, 28);
        let images: Vec<Image> = (0..32).map(|i| Image::filled(shape, if i % 2 == 0 { -0.8 } else { 0.8 })).collect();
        let labels = (0..32).map(|i| (i % 2) as u32).collect();
        ImageBatch::from_images(shape, &images, Some(labels)).unwrap()
    }

    #[test]
    fn learns_separable_classes() {
        let data = toy();
        // Enough steps for the batch-norm running statistics to settle.
        let mut cfg = ClassifierConfig::new(20, 4);
        cfg.batch_size = 8;
        let (clf, report) = train_classifier(&data, 2, &cfg, None).unwrap();
        assert_eq!(report.epoch_losses.len(), 20);
        assert_eq!(report.steps, 80);
        assert_eq!(clf.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn rejects_out_of_range_labels_and_applies_transform() {
        let data = toy();
        let cfg = ClassifierConfig::new(1, 4);
        assert!(train_classifier(&data, 1, &cfg, None).is_err());
        let mut seen = 0;
        let mut t = |b: &ImageBatch, _: &mut ChaCha8Rng| {
            seen += b.len();
            Ok(b.clone())
        };
        train_classifier(&data, 2, &cfg, Some(&mut t)).unwrap();
        assert_eq!(seen, 32);
    }
}
