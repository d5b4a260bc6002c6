//! Recovering generator codes for target images: a learned inverter gives a
//! starting code, per-image gradient descent refines it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::models::{init_weights, normalize_rows, ArchId, Encoder, LatentCode, ModelBundle};
use crate::sampler::sphere_noise;

/// Anything mapping `[n, d]` codes to `[n, c, h, w]` images.
pub trait LatentGenerator {
    fn latent_dim(&self) -> i64;
    /// Inference-mode output; must be differentiable with respect to `z`.
    fn generate_t(&self, z: &Tensor) -> Result<Tensor>;
}

impl LatentGenerator for ModelBundle {
    fn latent_dim(&self) -> i64 {
        ModelBundle::latent_dim(self)
    }

    fn generate_t(&self, z: &Tensor) -> Result<Tensor> {
        self.decode_t(z, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    /// The step size is divided by 10 after every `decay_every` iterations.
    pub decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for InverterConfig {
    fn default() -> Self {
        InverterConfig {
            iterations: 6400,
            lr: 1e-4,
            momentum: 0.1,
            decay_every: 1280,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl InverterConfig {
    /// Step size at 1-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let cuts = (iter.saturating_sub(1) / self.decay_every.max(1)) as i32;
        self.lr / 10f64.powi(cuts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Keep codes on the unit sphere the generator was trained on.
    pub renormalize: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 1000,
            lr: 0.01,
            renormalize: true,
        }
    }
}

#[derive(Debug)]
enum InverterNet {
    Conv(Encoder),
    Linear(nn::Linear),
}

/// Image-to-code regression network.
pub struct Inverter {
    vs: nn::VarStore,
    net: InverterNet,
    latent_dim: i64,
}

impl std::fmt::Debug for Inverter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Inverter")
            .field("net", &self.net)
            .field("latent_dim", &self.latent_dim)
            .finish_non_exhaustive()
    }
}

impl Inverter {
    /// Encoder-architecture inverter for images of `arch`.
    pub fn conv(arch: ArchId, width: i64, latent_dim: i64, seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = Encoder::new(vs.root() / "inverter", arch, width, latent_dim, true);
        init_weights(&vs, seed);
        Inverter {
            vs,
            net: InverterNet::Conv(net),
            latent_dim,
        }
    }

    /// Single linear layer on flattened images of `pixels` values.
    pub fn linear(pixels: i64, latent_dim: i64, seed: u64) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = nn::linear(vs.root() / "inverter", pixels, latent_dim, Default::default());
        init_weights(&vs, seed);
        Inverter {
            vs,
            net: InverterNet::Linear(net),
            latent_dim,
        }
    }

    pub fn latent_dim(&self) -> i64 {
        self.latent_dim
    }

    /// Raw regression output `[n, d]`.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        match &self.net {
            InverterNet::Conv(e) => e.forward_t(x, train),
            InverterNet::Linear(l) => l.forward(&x.flatten(1, -1)),
        }
    }

    /// Unit-norm starting codes for `x`.
    pub fn invert_t(&self, x: &Tensor) -> Tensor {
        tch::no_grad(|| normalize_rows(&self.forward_t(x, false)))
    }
}

/// Mean squared regression error per iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverterTrace {
    pub losses: Vec<f64>,
}

/// Regresses sampled codes from their generated images with SGD.
pub fn train_inverter(g: &impl LatentGenerator, inverter: &mut Inverter, cfg: &InverterConfig) -> Result<InverterTrace> {
    if inverter.latent_dim != g.latent_dim() {
        return Err(Error::Shape(format!(
            "inverter predicts {} dims, generator takes {}",
            inverter.latent_dim,
            g.latent_dim()
        )));
    }
    let mut opt = nn::Sgd {
        momentum: cfg.momentum,
        ..Default::default()
    }
    .build(&inverter.vs, cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iter in 1..=cfg.iterations {
        opt.set_lr(cfg.lr_at(iter));
        let z = sphere_noise(cfg.batch_size, g.latent_dim(), &mut rng);
        let x = tch::no_grad(|| g.generate_t(&z))?;
        let loss = inverter.forward_t(&x, true).mse_loss(&z, tch::Reduction::Mean);
        opt.backward_step(&loss);
        let l = loss.double_value(&[]);
        if !l.is_finite() {
            return Err(Error::Diverged {
                step: iter,
                reason: format!("inverter loss {l}"),
            });
        }
        losses.push(l);
    }
    Ok(InverterTrace { losses })
}

/// Outcome of refining one image's code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub initial: LatentCode,
    pub refined: LatentCode,
    /// Mean absolute pixel error before each refinement step.
    pub trace: Vec<f64>,
    /// Error of the starting code.
    pub initial_error: f64,
    /// Error of the refined code.
    pub final_error: f64,
}

/// Allowed drift of a code's norm before it is projected back to the sphere.
const SPHERE_SLACK: f64 = 1e-6;

fn project(z: &Tensor) -> Tensor {
    let norm = z.square().sum_dim_intlist(1, true, Kind::Float).sqrt();
    let off = (&norm - 1.0).abs().gt(SPHERE_SLACK);
    normalize_rows(z).where_self(&off, z)
}

fn per_image_l1(a: &Tensor, b: &Tensor) -> Tensor {
    (a - b).abs().flatten(1, -1).mean_dim(1, false, Kind::Float)
}

fn to_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(Vec::try_from(t.to_kind(Kind::Double).contiguous().view(-1))?)
}

/// Minimizes the L1 pixel error between `G(z)` and each target by plain
/// gradient descent on `z`, independently per image.
pub fn refine_latents(g: &impl LatentGenerator, targets: &Tensor, z0: &Tensor, cfg: &RefineConfig) -> Result<Vec<InversionResult>> {
    let n = targets.size()[0];
    if z0.size() != [n, g.latent_dim()] {
        return Err(Error::Shape(format!("expected [{n}, {}] codes, got {:?}", g.latent_dim(), z0.size())));
    }
    let mut traces = vec![Vec::with_capacity(cfg.iterations); n as usize];
    let mut z = z0.detach().copy();
    for _ in 0..cfg.iterations {
        let zv = z.set_requires_grad(true);
        let err = per_image_l1(&g.generate_t(&zv)?, targets);
        for (t, e) in traces.iter_mut().zip(to_f64(&err)?) {
            t.push(e);
        }
        if cfg.lr == 0.0 {
            z = zv.detach();
            continue;
        }
        // Summing per-image errors keeps each code's gradient independent
        // of the rest of the batch.
        let grad = Tensor::f_run_backward(&[err.sum(Kind::Float)], &[&zv], false, false)?;
        let stepped = zv.detach() - &grad[0] * cfg.lr;
        z = if cfg.renormalize { project(&stepped) } else { stepped };
    }
    let errors = |codes: &Tensor| -> Result<Vec<f64>> {
        tch::no_grad(|| g.generate_t(codes).map(|x| per_image_l1(&x, targets))).and_then(|e| to_f64(&e))
    };
    let (initial_errors, final_errors) = (errors(z0)?, errors(&z)?);
    let initial = LatentCode::from_rows(z0)?;
    let refined = LatentCode::from_rows(&z)?;
    Ok(traces
        .into_iter()
        .enumerate()
        .map(|(i, trace)| InversionResult {
            initial: initial[i].clone(),
            refined: refined[i].clone(),
            trace,
            initial_error: initial_errors[i],
            final_error: final_errors[i],
        })
        .collect())
}

/// Inverter followed by refinement, for a batch of target images.
pub fn invert_batch(g: &impl LatentGenerator, inverter: &Inverter, targets: &ImageBatch, cfg: &RefineConfig) -> Result<Vec<InversionResult>> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let x = targets.to_tensor(Device::Cpu);
    let z0 = inverter.invert_t(&x);
    refine_latents(g, &x, &z0, cfg)
}

/// Decodes each result's refined code.
pub fn reconstructions(bundle: &ModelBundle, results: &[InversionResult]) -> Result<ImageBatch> {
    let codes: Vec<LatentCode> = results.iter().map(|r| r.refined.clone()).collect();
    bundle.decode_codes(&codes)
}
