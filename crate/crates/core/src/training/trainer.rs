use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{nn, nn::OptimizerConfig, Device, Kind, Tensor};

use super::losses::{
    bce_per_image, gradient_penalty, kl_per_image, lsgan_discriminator, lsgan_per_image, recon_l1_per_image,
};
use super::{update_k, BalanceState, LossReport, TrainConfig, GAMMA_GUARD};
use crate::augment::make_triplet_batch;
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{slerp_rows, ModelBundle, Variant};
use crate::sampler::sphere_noise;

/// Called after every completed epoch with the 0-based epoch index.
pub type EpochHook<'a> = dyn FnMut(&Trainer, usize) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<LossReport>,
    pub epochs: usize,
    pub final_k: f64,
}

/// Owns a bundle and its optimizers for the duration of training.
pub struct Trainer {
    bundle: ModelBundle,
    cfg: TrainConfig,
    gen_opt: nn::Optimizer,
    disc_opt: Option<nn::Optimizer>,
    balance: BalanceState,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
    critic_updates: usize,
    history: Vec<LossReport>,
}

fn adam(vs: &nn::VarStore, cfg: &TrainConfig) -> Result<nn::Optimizer> {
    let (beta1, beta2) = cfg.adam_betas();
    Ok(nn::Adam {
        beta1,
        beta2,
        wd: 0.0,
        eps: 1e-8,
        amsgrad: false,
    }
    .build(vs, cfg.lr)?)
}

fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(Vec::<f64>::try_from(t.detach().to_kind(Kind::Double).contiguous().view(-1))?)
}

/// Per-image gradient norms of `grad`, laid out as `groups` stacked blocks
/// of `n` images.
fn block_norms(grad: &Tensor, groups: i64, n: i64) -> Tensor {
    grad.view([groups, n, -1])
        .square()
        .sum_dim_intlist([0i64, 2].as_slice(), false, Kind::Float)
        .sqrt()
}

/// Per-image weights `gamma` that scale the adversarial gradient to the
/// reconstruction gradient's norm, both measured at the generator output
/// `y`. `y` stacks `groups` blocks of `recon.len()` images that share one
/// loss each. Images whose adversarial gradient norm is below
/// [`GAMMA_GUARD`] get `gamma = 0`. The result is detached.
pub fn adversarial_gamma(y: &Tensor, groups: i64, recon: &Tensor, adv: &Tensor) -> Result<Tensor> {
    let n = recon.size()[0];
    let gr = Tensor::f_run_backward(&[recon.sum(Kind::Float)], &[y], true, false)?;
    let ga = Tensor::f_run_backward(&[adv.sum(Kind::Float)], &[y], true, false)?;
    let nr = block_norms(&gr[0], groups, n);
    let na = block_norms(&ga[0], groups, n);
    Ok((&nr / na.clamp_min(1e-30)).where_self(&na.ge(GAMMA_GUARD), &na.zeros_like()).detach())
}

impl Trainer {
    pub fn new(bundle: ModelBundle, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if bundle.variant() != cfg.variant {
            return Err(Error::VariantMismatch {
                found: bundle.variant().to_string(),
                expected: cfg.variant.to_string(),
            });
        }
        let gen_opt = adam(bundle.gen_vs(), &cfg)?;
        let disc_opt = bundle.disc_vs().map(|vs| adam(vs, &cfg)).transpose()?;
        let balance = BalanceState {
            k: cfg.k_init,
            step: cfg.k_step,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            bundle,
            cfg,
            gen_opt,
            disc_opt,
            balance,
            rng,
            step: 0,
            epoch: 0,
            critic_updates: 0,
            history: Vec::new(),
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn balance(&self) -> BalanceState {
        self.balance
    }

    pub fn history(&self) -> &[LossReport] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn set_lr(&mut self, lr: f64) {
        self.gen_opt.set_lr(lr);
        if let Some(o) = &mut self.disc_opt {
            o.set_lr(lr);
        }
    }

    /// One optimizer step of the configured variant on `batch`.
    pub fn train_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        if batch.len() < 2 {
            return Err(Error::InvalidArgument("training batches need at least 2 images".into()));
        }
        if batch.shape() != self.bundle.image_shape() {
            return Err(Error::Shape(format!(
                "model expects {} images, got {}",
                self.bundle.image_shape(),
                batch.shape()
            )));
        }
        let mut report = match self.cfg.variant {
            Variant::AugIntAe => self.augintae_step(batch)?,
            Variant::Ae => self.ae_step(batch)?,
            Variant::IntAe => self.intae_step(batch)?,
            Variant::Vae => self.vae_step(batch)?,
            Variant::WganGp => self.wgangp_step(batch)?,
        };
        report.step = self.step;
        report.epoch = self.epoch;
        report.lr = self.cfg.lr_at_epoch(self.epoch);
        if !report.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite loss {report:?}"),
            });
        }
        self.step += 1;
        self.history.push(report);
        Ok(report)
    }

    fn alpha_tensor(alpha: &[f64]) -> Tensor {
        let a: Vec<f32> = alpha.iter().map(|&v| v as f32).collect();
        Tensor::from_slice(&a)
    }

    /// Decodes the alpha-mixed code of two augmented views and supervises it
    /// with the view generated from the alpha-mixed parameters.
    fn augintae_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        let t = make_triplet_batch(batch, &self.cfg.augment, &mut self.rng);
        let (a, b, c) = (t.a.to_tensor(Device::Cpu), t.b.to_tensor(Device::Cpu), t.c.to_tensor(Device::Cpu));
        let za = self.bundle.encode_t(&a, true)?;
        let zb = self.bundle.encode_t(&b, true)?;
        let z = slerp_rows(&za, &zb, &Self::alpha_tensor(&t.alpha))?;
        let c_hat = self.bundle.decode_t(&z, true)?;
        let recon = recon_l1_per_image(&c, &c_hat)?;
        self.adversarial_update(&c_hat, 1, &recon, &c)
    }

    /// Plain autoencoding of the alpha-mixed view.
    fn ae_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        let t = make_triplet_batch(batch, &self.cfg.augment, &mut self.rng);
        let c = t.c.to_tensor(Device::Cpu);
        let z = self.bundle.encode_t(&c, true)?;
        let c_hat = self.bundle.decode_t(&z, true)?;
        let recon = recon_l1_per_image(&c, &c_hat)?;
        self.adversarial_update(&c_hat, 1, &recon, &c)
    }

    /// Reconstructs both seed views; the interpolation is shaped only by the
    /// adversarial term, which also covers the seed reconstructions.
    fn intae_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        let t = make_triplet_batch(batch, &self.cfg.augment, &mut self.rng);
        let (a, b, c) = (t.a.to_tensor(Device::Cpu), t.b.to_tensor(Device::Cpu), t.c.to_tensor(Device::Cpu));
        let n = batch.len() as i64;
        let za = self.bundle.encode_t(&a, true)?;
        let zb = self.bundle.encode_t(&b, true)?;
        let zi = slerp_rows(&za, &zb, &Self::alpha_tensor(&t.alpha))?;
        let y = self.bundle.decode_t(&Tensor::cat(&[&za, &zb, &zi], 0), true)?;
        let recon = (recon_l1_per_image(&a, &y.narrow(0, 0, n))? + recon_l1_per_image(&b, &y.narrow(0, n, n))?) * 0.5;
        self.adversarial_update(&y, 3, &recon, &c)
    }

    /// Shared generator/discriminator update for the LSGAN-regularized
    /// autoencoders. `y` holds `groups` blocks of generator outputs for the
    /// same `n` source images; `recon` is the per-image reconstruction loss.
    fn adversarial_update(&mut self, y: &Tensor, groups: i64, recon: &Tensor, real: &Tensor) -> Result<LossReport> {
        let n = recon.size()[0];
        let k = self.balance.k;
        if let Some(vs) = self.bundle.disc_vs_mut() {
            vs.freeze();
        }
        let scores = self.bundle.discriminate_t(y)?;
        let adv = lsgan_per_image(&scores, 1.0).view([groups, n]).mean_dim(0, false, Kind::Float);
        let gamma = adversarial_gamma(y, groups, recon, &adv)?;
        let total = recon.mean(Kind::Float) + (&gamma * &adv).mean(Kind::Float) * k;
        self.gen_opt.zero_grad();
        total.backward();
        self.gen_opt.step();
        if let Some(vs) = self.bundle.disc_vs_mut() {
            vs.unfreeze();
        }

        let real_scores = self.bundle.discriminate_t(real)?;
        let fake_scores = self.bundle.discriminate_t(&y.detach())?;
        let l_disc = lsgan_discriminator(&real_scores, &fake_scores);
        let opt = self.disc_opt.as_mut().expect("adversarial variant has a discriminator optimizer");
        opt.zero_grad();
        l_disc.backward();
        opt.step();
        let d_real = scalar(&real_scores.mean(Kind::Float));
        let d_fake = scalar(&fake_scores.mean(Kind::Float));
        if self.cfg.k_controller {
            self.balance = update_k(self.balance, d_real, d_fake);
        }

        let (r, a, g) = (to_vec(recon)?, to_vec(&adv)?, to_vec(&gamma)?);
        let nf = n as f64;
        let l_recon = r.iter().sum::<f64>() / nf;
        let adv_sum: f64 = a.iter().sum();
        let weighted: f64 = g.iter().zip(&a).map(|(g, a)| g * a).sum();
        let gamma_eff = if adv_sum > 0.0 { weighted / adv_sum } else { 0.0 };
        Ok(LossReport {
            step: 0,
            epoch: 0,
            l_recon,
            l_adv: adv_sum / nf,
            gamma: gamma_eff,
            gamma_mean: g.iter().sum::<f64>() / nf,
            k,
            l_total: l_recon + k * weighted / nf,
            l_kl: 0.0,
            l_disc: scalar(&l_disc),
            d_real,
            d_fake,
            lr: 0.0,
        })
    }

    fn normal_tensor(&mut self, rows: i64, cols: i64) -> Tensor {
        let v: Vec<f32> = (0..rows * cols).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::from_slice(&v).view([rows, cols])
    }

    /// Evidence lower bound on the unaugmented images.
    fn vae_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        let x = batch.to_tensor(Device::Cpu);
        let (mu, logvar) = self.bundle.encode_gaussian_t(&x, true)?;
        let eps = self.normal_tensor(batch.len() as i64, self.bundle.latent_dim());
        let z = &mu + (&logvar * 0.5).exp() * eps;
        let x_hat = self.bundle.decode_t(&z, true)?;
        let rec = bce_per_image(&x, &x_hat)?;
        let kl = kl_per_image(&mu, &logvar);
        let total = (&rec + &kl).mean(Kind::Float);
        self.gen_opt.zero_grad();
        total.backward();
        self.gen_opt.step();
        let l = scalar(&total);
        Ok(LossReport {
            step: 0,
            epoch: 0,
            l_recon: l,
            l_adv: 0.0,
            gamma: 0.0,
            gamma_mean: 0.0,
            k: 0.0,
            l_total: l,
            l_kl: scalar(&kl.mean(Kind::Float)),
            l_disc: 0.0,
            d_real: 0.0,
            d_fake: 0.0,
            lr: 0.0,
        })
    }

    /// One critic update; every `critic_iters`-th call also updates the
    /// generator.
    fn wgangp_step(&mut self, batch: &ImageBatch) -> Result<LossReport> {
        let n = batch.len() as i64;
        let real = batch.to_tensor(Device::Cpu);
        let z = sphere_noise(n as usize, self.bundle.latent_dim(), &mut self.rng);
        let fake = self.bundle.decode_t(&z, true)?.detach();
        let eps: Vec<f32> = (0..n).map(|_| self.rng.random::<f32>()).collect();
        let eps = Tensor::from_slice(&eps);
        let real_scores = self.bundle.discriminate_t(&real)?;
        let fake_scores = self.bundle.discriminate_t(&fake)?;
        let bundle = &self.bundle;
        let gp = gradient_penalty(
            |x| bundle.discriminate_t(x).expect("critic present"),
            &real,
            &fake,
            &eps,
        )?;
        let critic_loss = fake_scores.mean(Kind::Float) - real_scores.mean(Kind::Float) + &gp * self.cfg.gp_lambda;
        let opt = self.disc_opt.as_mut().expect("critic optimizer");
        opt.zero_grad();
        critic_loss.backward();
        opt.step();
        self.critic_updates += 1;

        let mut g_loss = -scalar(&fake_scores.mean(Kind::Float));
        if self.critic_updates % self.cfg.critic_iters == 0 {
            let z = sphere_noise(n as usize, self.bundle.latent_dim(), &mut self.rng);
            if let Some(vs) = self.bundle.disc_vs_mut() {
                vs.freeze();
            }
            let gen = self.bundle.decode_t(&z, true)?;
            let loss = -self.bundle.discriminate_t(&gen)?.mean(Kind::Float);
            self.gen_opt.zero_grad();
            loss.backward();
            self.gen_opt.step();
            if let Some(vs) = self.bundle.disc_vs_mut() {
                vs.unfreeze();
            }
            g_loss = scalar(&loss);
        }
        Ok(LossReport {
            step: 0,
            epoch: 0,
            l_recon: 0.0,
            l_adv: g_loss,
            gamma: 1.0,
            gamma_mean: 1.0,
            k: 1.0,
            l_total: g_loss,
            l_kl: 0.0,
            l_disc: scalar(&critic_loss),
            d_real: scalar(&real_scores.mean(Kind::Float)),
            d_fake: scalar(&fake_scores.mean(Kind::Float)),
            lr: 0.0,
        })
    }

    /// Runs the remaining epochs over `data`, shuffling each epoch and
    /// dropping the incomplete final batch.
    pub fn fit(&mut self, data: &ImageBatch, mut hook: Option<&mut EpochHook<'_>>) -> Result<TrainSummary> {
        let n = data.len();
        let bs = self.cfg.batch_size.min(n);
        if bs < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 training images, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        while self.epoch < self.cfg.epochs {
            let epoch = self.epoch;
            self.set_lr(self.cfg.lr_at_epoch(epoch));
            order.shuffle(&mut self.rng);
            let cap = self.cfg.steps_per_epoch.unwrap_or(usize::MAX);
            for chunk in order.chunks_exact(bs).take(cap) {
                let batch = data.select(chunk);
                self.train_step(&batch)?;
            }
            if let Some(last) = self.history.last() {
                tracing::info!(
                    epoch,
                    step = self.step,
                    l_recon = last.l_recon,
                    l_adv = last.l_adv,
                    k = last.k,
                    "epoch finished"
                );
            }
            self.epoch += 1;
            if let Some(h) = hook.as_deref_mut() {
                h(self, epoch)?;
            }
        }
        Ok(TrainSummary {
            history: self.history.clone(),
            epochs: self.epoch,
            final_k: self.balance.k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentSubset;
    use crate::datasets::letters::{generate_letters, LetterStyle};
    use crate::models::{ArchId, ModelSpec};

    fn data(n_per_class: usize) -> ImageBatch {
        generate_letters(n_per_class, 1, &LetterStyle::default())
    }

    fn trainer(variant: Variant, seed: u64) -> Trainer {
        let bundle = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, variant).with_width(4), seed).unwrap();
        let mut cfg = TrainConfig::new(variant, 1).with_epochs(1).with_seed(seed);
        cfg.batch_size = 8;
        Trainer::new(bundle, cfg).unwrap()
    }

    #[test]
    fn every_variant_steps() {
        let b = data(1).slice(0, 8);
        for v in Variant::ALL {
            let mut t = trainer(v, 1);
            for _ in 0..3 {
                let r = t.train_step(&b).unwrap();
                assert!(r.is_finite(), "{v}: {r:?}");
                assert!(r.composition_error() < 1e-9, "{v}: {r:?}");
                assert!((0.0..=1.0).contains(&t.balance().k));
            }
        }
    }

    #[test]
    fn zero_adversarial_weight_matches_plain_autoencoder() {
        let b = data(1).slice(0, 8);
        let make = |variant| {
            let bundle = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, variant).with_width(4), 5).unwrap();
            let mut cfg = TrainConfig::new(variant, 1).with_epochs(1).with_seed(5);
            cfg.batch_size = 8;
            cfg.augment = cfg.augment.with_subset(AugmentSubset::None);
            cfg.k_controller = false;
            cfg.k_init = 0.0;
            Trainer::new(bundle, cfg).unwrap()
        };
        let mut aug = make(Variant::AugIntAe);
        let mut ae = make(Variant::Ae);
        for _ in 0..3 {
            let ra = aug.train_step(&b).unwrap();
            let rb = ae.train_step(&b).unwrap();
            assert_eq!(ra.l_recon, rb.l_recon);
            assert_eq!(ra.l_total, ra.l_recon);
        }
        let pa = aug.bundle().named_tensors();
        let pb = ae.bundle().named_tensors();
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            if na.contains("running_") || na.contains("num_batches") {
                continue;
            }
            assert!(ta.equal(tb), "{na} differs");
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let d = data(2);
        let run = || {
            let mut t = trainer(Variant::AugIntAe, 11);
            let mut out = Vec::new();
            for s in 0..4 {
                out.push(t.train_step(&d.slice(s * 8, s * 8 + 8)).unwrap().l_total);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fit_respects_step_cap_and_mismatch() {
        let mut t = trainer(Variant::Ae, 2);
        let mut cfg = t.config().clone();
        cfg.steps_per_epoch = Some(2);
        let bundle = t.into_bundle();
        t = Trainer::new(bundle, cfg).unwrap();
        let summary = t.fit(&data(1), None).unwrap();
        assert_eq!(summary.history.len(), 2);
        let bundle = ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 8, Variant::Vae).with_width(4), 0).unwrap();
        assert!(matches!(
            Trainer::new(bundle, TrainConfig::new(Variant::Ae, 1)),
            Err(Error::VariantMismatch { .. })
        ));
    }
}
