//! Per-image loss terms. Every function returns a `[n]` tensor so callers
//! can weight images individually.

use tch::{Kind, Tensor};

use crate::error::{Error, Result};

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.size(), b.size())));
    }
    Ok(())
}

/// Mean absolute pixel difference of each image.
pub fn recon_l1_per_image(c: &Tensor, c_hat: &Tensor) -> Result<Tensor> {
    check_same(c, c_hat)?;
    Ok((c - c_hat).abs().flatten(1, -1).mean_dim(1, false, Kind::Float))
}

/// Mean absolute pixel difference over the whole batch.
pub fn recon_loss(c: &Tensor, c_hat: &Tensor) -> Result<f64> {
    Ok(recon_l1_per_image(c, c_hat)?.mean(Kind::Float).double_value(&[]))
}

/// Least-squares adversarial term `(score - target)^2` per image.
pub fn lsgan_per_image(scores: &Tensor, target: f64) -> Tensor {
    (scores.view([-1]) - target).square()
}

/// Discriminator objective `((D(real) - 1)^2 + D(fake)^2) / 2`, batch means.
pub fn lsgan_discriminator(real_scores: &Tensor, fake_scores: &Tensor) -> Tensor {
    (lsgan_per_image(real_scores, 1.0).mean(Kind::Float) + lsgan_per_image(fake_scores, 0.0).mean(Kind::Float)) * 0.5
}

/// Bernoulli negative log-likelihood summed over pixels, images in [-1, 1].
pub fn bce_per_image(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    check_same(x, x_hat)?;
    let target = (x + 1.0) * 0.5;
    let p = ((x_hat + 1.0) * 0.5).clamp(1e-6, 1.0 - 1e-6);
    let ll = &target * p.log() + (target.ones_like() - &target) * (p.ones_like() - &p).log();
    Ok(-ll.flatten(1, -1).sum_dim_intlist(1, false, Kind::Float))
}

/// KL divergence of `N(mu, exp(logvar))` from the unit Gaussian, per image.
pub fn kl_per_image(mu: &Tensor, logvar: &Tensor) -> Tensor {
    let terms = logvar.ones_like() + logvar - mu.square() - logvar.exp();
    terms.sum_dim_intlist(1, false, Kind::Float) * -0.5
}

/// Gradient penalty `mean((|grad D(x_mix)| - 1)^2)` on points mixed per image
/// with weights `eps` (`[n]`) between real and fake batches.
pub fn gradient_penalty(critic: impl Fn(&Tensor) -> Tensor, real: &Tensor, fake: &Tensor, eps: &Tensor) -> Result<Tensor> {
    check_same(real, fake)?;
    let e = eps.to_kind(Kind::Float).view([-1, 1, 1, 1]);
    let mixed = (&e * real + (e.ones_like() - &e) * fake).detach().set_requires_grad(true);
    let scores = critic(&mixed).sum(Kind::Float);
    let grads = Tensor::run_backward(&[scores], &[&mixed], true, true);
    let norms = grads[0].flatten(1, -1).square().sum_dim_intlist(1, false, Kind::Float).clamp_min(1e-24).sqrt();
    Ok((norms - 1.0).square().mean(Kind::Float))
}

/// Per-image L2 norm of a batch of gradients.
pub fn per_image_norm(grads: &[Tensor]) -> Tensor {
    let mut total = grads[0].flatten(1, -1).square().sum_dim_intlist(1, false, Kind::Float);
    for g in &grads[1..] {
        total += g.flatten(1, -1).square().sum_dim_intlist(1, false, Kind::Float);
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    fn full(v: f32, shape: &[i64]) -> Tensor {
        Tensor::full(shape, v as f64, (Kind::Float, Device::Cpu))
    }

    #[test]
    fn recon_examples() {
        let x = Tensor::rand([2, 1, 4, 4], (Kind::Float, Device::Cpu));
        assert_eq!(recon_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(recon_loss(&full(1.0, &[1, 1, 4, 4]), &full(-1.0, &[1, 1, 4, 4])).unwrap(), 2.0);
        let a = full(0.0, &[1, 1, 4, 4]);
        let b = a.copy();
        let _ = b.get(0).get(0).get(1).get(2).fill_(0.5);
        assert!((recon_loss(&a, &b).unwrap() - 0.5 / 16.0).abs() < 1e-9);
        assert!(recon_loss(&a, &full(0.0, &[1, 1, 2, 2])).is_err());
    }

    #[test]
    fn kl_of_unit_gaussian_is_zero() {
        let mu = Tensor::zeros([3, 8], (Kind::Float, Device::Cpu));
        let kl = kl_per_image(&mu, &mu);
        assert_eq!(Vec::<f32>::try_from(kl).unwrap(), vec![0.0; 3]);
        let kl = kl_per_image(&full(1.0, &[1, 2]), &full(0.0, &[1, 2]));
        assert!((kl.double_value(&[0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn penalty_vanishes_for_unit_lipschitz_critic() {
        // f(x) = <u, x> with |u| = 1 has gradient norm exactly 1 everywhere.
        let u = Tensor::randn([1, 1, 3, 3], (Kind::Float, Device::Cpu));
        let u = &u / u.norm();
        let critic = |x: &Tensor| (x * &u).flatten(1, -1).sum_dim_intlist(1, false, Kind::Float);
        let real = Tensor::randn([4, 1, 3, 3], (Kind::Float, Device::Cpu));
        let fake = Tensor::randn([4, 1, 3, 3], (Kind::Float, Device::Cpu));
        let eps = Tensor::rand([4], (Kind::Float, Device::Cpu));
        let gp = gradient_penalty(critic, &real, &fake, &eps).unwrap().double_value(&[]);
        assert!(gp < 1e-10, "{gp}");
        let steep = |x: &Tensor| (x * &u * 3.0).flatten(1, -1).sum_dim_intlist(1, false, Kind::Float);
        let gp = gradient_penalty(steep, &real, &fake, &eps).unwrap().double_value(&[]);
        assert!((gp - 4.0).abs() < 1e-4);
    }

    #[test]
    fn bce_is_minimal_at_target() {
        let x = full(1.0, &[1, 1, 2, 2]);
        let good = bce_per_image(&x, &x).unwrap().double_value(&[0]);
        let bad = bce_per_image(&x, &full(0.0, &[1, 1, 2, 2])).unwrap().double_value(&[0]);
        assert!(good < 1e-4 && bad > good);
    }
}
