//! Training objectives, adversarial balancing and optimization schedules.

mod classifier;
pub mod losses;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentRangeSpec;
use crate::error::{Error, Result};
use crate::models::Variant;

pub use classifier::{train_classifier, BatchTransform, ClassifierConfig, ClassifierReport};
pub use trainer::{adversarial_gamma, EpochHook, TrainSummary, Trainer};

/// Default epoch count for every variant except the WGAN-GP, which trains
/// twice as long.
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_BATCH: usize = 64;
/// Reference decay points for a 100-epoch schedule.
pub const REFERENCE_DECAY: [usize; 2] = [35, 70];

/// Decay epochs for a schedule of `epochs`, keeping the 35% / 70% positions.
pub fn scaled_decay(epochs: usize) -> Vec<usize> {
    let mut v: Vec<usize> = REFERENCE_DECAY
        .iter()
        .map(|&d| ((d * epochs) as f64 / DEFAULT_EPOCHS as f64).round() as usize)
        .filter(|&d| d > 0 && d < epochs)
        .collect();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub lr: f64,
    /// Epoch indices (0-based) at which the step size is divided by 10.
    /// Ignored by adversarial variants.
    pub lr_decay_epochs: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentRangeSpec,
    /// Dynamic adjustment of the adversarial weight k; when off, k stays at
    /// `k_init`.
    pub k_controller: bool,
    pub k_init: f64,
    pub k_step: f64,
    /// WGAN-GP penalty weight.
    pub gp_lambda: f64,
    /// WGAN-GP critic updates per generator update.
    pub critic_iters: usize,
    /// Optional cap on optimizer steps per epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
}

impl TrainConfig {
    /// Reference defaults for `variant` on images with `channels` channels.
    pub fn new(variant: Variant, channels: usize) -> Self {
        let epochs = if variant == Variant::WganGp { 2 * DEFAULT_EPOCHS } else { DEFAULT_EPOCHS };
        TrainConfig {
            variant,
            epochs,
            lr: DEFAULT_LR,
            lr_decay_epochs: if variant.is_adversarial() { Vec::new() } else { REFERENCE_DECAY.to_vec() },
            batch_size: DEFAULT_BATCH,
            seed: 0,
            augment: AugmentRangeSpec::for_channels(channels),
            k_controller: true,
            k_init: 1.0,
            k_step: 0.001,
            gp_lambda: 10.0,
            critic_iters: 5,
            steps_per_epoch: None,
        }
    }

    /// Sets the epoch count and rescales the decay points proportionally.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        if !self.variant.is_adversarial() {
            self.lr_decay_epochs = scaled_decay(epochs);
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if let Some(&d) = self.lr_decay_epochs.iter().find(|&&d| d >= self.epochs) {
            return Err(Error::Config(format!(
                "train.lr_decay_epochs: {d} is not below epochs = {}",
                self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.k_init) {
            return Err(Error::Config(format!("train.k_init {} outside [0, 1]", self.k_init)));
        }
        if self.critic_iters == 0 {
            return Err(Error::Config("train.critic_iters must be positive".into()));
        }
        self.augment.validate()
    }

    /// Step size during epoch `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.variant.is_adversarial() {
            return self.lr;
        }
        let cuts = self.lr_decay_epochs.iter().filter(|&&d| epoch >= d).count() as i32;
        self.lr / 10f64.powi(cuts)
    }

    /// Adam `(beta1, beta2)`.
    pub fn adam_betas(&self) -> (f64, f64) {
        if self.variant.is_adversarial() {
            (0.5, 0.999)
        } else {
            (0.9, 0.999)
        }
    }
}

/// Adversarial weight controller state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceState {
    pub k: f64,
    pub step: f64,
}

impl Default for BalanceState {
    fn default() -> Self {
        BalanceState { k: 1.0, step: 0.001 }
    }
}

/// `k' = clamp(k - step * (1 - (d_real - d_fake)), 0, 1)`.
pub fn update_k(state: BalanceState, d_real: f64, d_fake: f64) -> BalanceState {
    let k_bar = state.k - state.step * (1.0 - (d_real - d_fake));
    BalanceState {
        k: k_bar.clamp(0.0, 1.0),
        ..state
    }
}

/// Below this adversarial gradient norm the image gets no adversarial weight.
pub const GAMMA_GUARD: f64 = 1e-8;

/// Ratio of reconstruction to adversarial gradient norms.
pub fn gamma_rescale(grad_recon_norm: f64, grad_adv_norm: f64) -> f64 {
    if grad_adv_norm < GAMMA_GUARD {
        0.0
    } else {
        grad_recon_norm / grad_adv_norm
    }
}

/// Losses of one optimizer step.
///
/// `gamma` is the effective batch factor `sum(gamma_i * adv_i) / sum(adv_i)`,
/// so `l_total = l_recon + k * gamma * l_adv`; `gamma_mean` is the plain mean
/// of the per-image factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub epoch: usize,
    pub l_recon: f64,
    pub l_adv: f64,
    pub gamma: f64,
    pub gamma_mean: f64,
    pub k: f64,
    pub l_total: f64,
    /// KL term of the VAE objective (already included in `l_recon`).
    #[serde(default)]
    pub l_kl: f64,
    pub l_disc: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub lr: f64,
}

impl LossReport {
    /// Relative error of the composition identity.
    pub fn composition_error(&self) -> f64 {
        let rhs = self.l_recon + self.k * self.gamma * self.l_adv;
        (self.l_total - rhs).abs() / self.l_total.abs().max(1e-12)
    }

    pub fn is_finite(&self) -> bool {
        [self.l_recon, self.l_adv, self.gamma, self.l_total, self.l_disc]
            .iter()
            .all(|v| v.is_finite())
    }
}
