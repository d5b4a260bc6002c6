use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::sampler::{hallucinate_batch, mixup_batch};
use crate::training::{train_classifier, BatchTransform, ClassifierConfig};

/// How each classifier training batch is augmented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    None,
    Mixup,
    Ae,
    #[serde(rename = "augintae")]
    AugIntAe,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::None, Regime::Mixup, Regime::Ae, Regime::AugIntAe];

    pub fn name(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Mixup => "mixup",
            Regime::Ae => "ae",
            Regime::AugIntAe => "augintae",
        }
    }

    /// Whether the regime decodes latent midpoints through an autoencoder.
    pub fn needs_model(self) -> bool {
        matches!(self, Regime::Ae | Regime::AugIntAe)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation regime `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallucinationConfig {
    pub runs: usize,
    /// Epochs for the augmented regimes; the unaugmented control trains
    /// twice as long.
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of each batch replaced by interpolations.
    pub fraction: f64,
    pub mixup_alpha: f64,
    pub width: i64,
    pub seed: u64,
}

impl Default for HallucinationConfig {
    fn default() -> Self {
        HallucinationConfig {
            runs: 10,
            epochs: 100,
            batch_size: 64,
            fraction: 0.5,
            mixup_alpha: 0.5,
            width: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRow {
    pub regime: Regime,
    pub epochs: usize,
    /// Test accuracy of each run, in percent.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Half-width of the 95% confidence interval of the mean.
    pub ci95: f64,
}

/// Mean and half-width of the Student-t 95% confidence interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

fn run_regime(
    regime: Regime,
    model: Option<&ModelBundle>,
    train: &ImageBatch,
    test: &ImageBatch,
    n_classes: usize,
    cfg: &HallucinationConfig,
) -> Result<HallucinationRow> {
    if regime.needs_model() && model.is_none() {
        return Err(Error::InvalidArgument(format!("regime `{regime}` needs a trained autoencoder")));
    }
    let epochs = if regime == Regime::None { 2 * cfg.epochs } else { cfg.epochs };
    let mut accuracies = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut ccfg = ClassifierConfig::new(epochs, cfg.width).with_seed(cfg.seed + run as u64);
        ccfg.batch_size = cfg.batch_size;
        let mut mix = |b: &ImageBatch, rng: &mut ChaCha8Rng| match regime {
            Regime::None => Ok(b.clone()),
            Regime::Mixup => mixup_batch(b, cfg.fraction, cfg.mixup_alpha, rng),
            Regime::Ae | Regime::AugIntAe => hallucinate_batch(model.expect("checked"), b, cfg.fraction, rng),
        };
        let transform: Option<&mut BatchTransform<'_>> = if regime == Regime::None { None } else { Some(&mut mix) };
        let (clf, _) = train_classifier(train, n_classes, &ccfg, transform)?;
        let acc = 100.0 * clf.accuracy(test)?;
        tracing::info!(regime = regime.name(), run, accuracy = acc, "hallucination run");
        accuracies.push(acc);
    }
    let (mean, ci95) = mean_ci95(&accuracies);
    Ok(HallucinationRow {
        regime,
        epochs,
        accuracies,
        mean,
        ci95,
    })
}

/// Trains the letter classifier under each regime. Run `i` of every regime
/// starts from the same initialization.
pub fn hallucination_experiment(
    train: &ImageBatch,
    test: &ImageBatch,
    n_classes: usize,
    regimes: &[(Regime, Option<&ModelBundle>)],
    cfg: &HallucinationConfig,
) -> Result<Vec<HallucinationRow>> {
    regimes
        .iter()
        .map(|&(regime, model)| run_regime(regime, model, train, test, n_classes, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_interval() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // t(0.975, 2) = 4.302653, s = 1, n = 3.
        assert!((h - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci95(&[5.0, 5.0]).1, 0.0);
    }

    #[test]
    fn regimes_parse_and_control_doubles_epochs() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        let shape = crate::datasets::ImageShape::new(1, 28, 28);
        let img = crate::datasets::Image::filled(shape, 0.0);
        let data = ImageBatch::from_images(shape, &vec![img; 8], Some(vec![0, 1, 0, 1, 0, 1, 0, 1])).unwrap();
        let cfg = HallucinationConfig {
            runs: 1,
            epochs: 1,
            batch_size: 4,
            width: 4,
            ..Default::default()
        };
        let rows = hallucination_experiment(&data, &data, 2, &[(Regime::None, None), (Regime::Mixup, None)], &cfg).unwrap();
        assert_eq!((rows[0].epochs, rows[1].epochs), (2, 1));
        assert!(hallucination_experiment(&data, &data, 2, &[(Regime::Ae, None)], &cfg).is_err());
    }
}
