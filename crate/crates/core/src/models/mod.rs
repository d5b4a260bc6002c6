//! Encoder, generator and discriminator bundles.

mod classifier;
mod latent;
mod network;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tch::{nn, Device, Kind, Tensor};

use crate::datasets::{ImageBatch, ImageShape};
use crate::error::{Error, Result};

pub use classifier::Classifier;
pub use latent::{angle, lerp_rows, normalize_rows, slerp, slerp_rows, LatentCode, NORM_EPS, PARALLEL_EPS};
pub use network::{ArchId, Encoder, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "augintae")]
    AugIntAe,
    Ae,
    #[serde(rename = "intae")]
    IntAe,
    Vae,
    #[serde(rename = "wgangp")]
    WganGp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::AugIntAe, Variant::Ae, Variant::IntAe, Variant::Vae, Variant::WganGp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AugIntAe => "augintae",
            Variant::Ae => "ae",
            Variant::IntAe => "intae",
            Variant::Vae => "vae",
            Variant::WganGp => "wgangp",
        }
    }

    /// Whether training involves a discriminator or critic.
    pub fn is_adversarial(self) -> bool {
        !matches!(self, Variant::Vae)
    }

    pub fn has_encoder(self) -> bool {
        !matches!(self, Variant::WganGp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// Everything needed to rebuild a bundle's networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: ArchId,
    pub latent_dim: i64,
    pub variant: Variant,
    /// Base channel width; 64 reproduces the reference templates.
    pub width: i64,
}

impl ModelSpec {
    pub fn new(arch: ArchId, latent_dim: i64, variant: Variant) -> Self {
        ModelSpec {
            arch,
            latent_dim,
            variant,
            width: 64,
        }
    }

    pub fn with_width(mut self, width: i64) -> Self {
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config(format!("latent_dim must be positive, got {}", self.latent_dim)));
        }
        let min_width = if self.arch == ArchId::Dcgan128 { 2 } else { 1 };
        if self.width < min_width || (self.arch == ArchId::Dcgan128 && self.width % 2 != 0) {
            return Err(Error::Config(format!("invalid width {} for {}", self.width, self.arch)));
        }
        Ok(())
    }
}

/// Re-initializes every variable from a seeded stream: weights of
/// convolutional and linear layers from N(0, 0.02), batch-norm scales from
/// N(1, 0.02), biases at zero. Independent of torch's global generator.
pub fn init_weights(vs: &nn::VarStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let w = Normal::new(0.0f32, 0.02).expect("valid normal");
    tch::no_grad(|| {
        for (name, mut t) in vars {
            let n = t.numel();
            let values: Vec<f32> = if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.ends_with(".weight") && t.dim() >= 2 {
                (0..n).map(|_| w.sample(&mut rng)).collect()
            } else if name.ends_with(".weight") {
                (0..n).map(|_| 1.0 + w.sample(&mut rng)).collect()
            } else {
                continue;
            };
            let src = Tensor::from_slice(&values).view(t.size().as_slice());
            t.copy_(&src);
        }
    });
}

/// Encoder, generator and optional discriminator for one variant.
pub struct ModelBundle {
    spec: ModelSpec,
    gen_vs: nn::VarStore,
    encoder: Option<Encoder>,
    generator: Generator,
    disc_vs: Option<nn::VarStore>,
    discriminator: Option<Encoder>,
}

impl fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelBundle").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl ModelBundle {
    /// Builds freshly initialized networks.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let gen_vs = nn::VarStore::new(Device::Cpu);
        let root = gen_vs.root();
        let encoder = spec.variant.has_encoder().then(|| {
            let out = if spec.variant == Variant::Vae { 2 * spec.latent_dim } else { spec.latent_dim };
            Encoder::new(&root / "encoder", spec.arch, spec.width, out, true)
        });
        let generator = Generator::new(&root / "generator", spec.arch, spec.width, spec.latent_dim);
        init_weights(&gen_vs, seed);
        let (disc_vs, discriminator) = if spec.variant.is_adversarial() {
            let vs = nn::VarStore::new(Device::Cpu);
            let d = Encoder::new(vs.root() / "discriminator", spec.arch, spec.width, 1, false);
            init_weights(&vs, seed ^ 0xd15c);
            (Some(vs), Some(d))
        } else {
            (None, None)
        };
        Ok(ModelBundle {
            spec,
            gen_vs,
            encoder,
            generator,
            disc_vs,
            discriminator,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn latent_dim(&self) -> i64 {
        self.spec.latent_dim
    }

    pub fn image_shape(&self) -> ImageShape {
        self.spec.arch.input_shape()
    }

    pub fn gen_vs(&self) -> &nn::VarStore {
        &self.gen_vs
    }

    pub fn gen_vs_mut(&mut self) -> &mut nn::VarStore {
        &mut self.gen_vs
    }

    pub fn disc_vs(&self) -> Option<&nn::VarStore> {
        self.disc_vs.as_ref()
    }

    pub fn disc_vs_mut(&mut self) -> Option<&mut nn::VarStore> {
        self.disc_vs.as_mut()
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Encoder> {
        self.discriminator.as_ref()
    }

    /// Layer count per network, in export order.
    pub fn layer_counts(&self) -> Vec<(&'static str, usize)> {
        let mut v = Vec::new();
        if let Some(e) = &self.encoder {
            v.push(("encoder", e.layer_count()));
        }
        v.push(("generator", self.generator.layer_count()));
        if let Some(d) = &self.discriminator {
            v.push(("discriminator", d.layer_count()));
        }
        v
    }

    fn require_encoder(&self) -> Result<&Encoder> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} models have no encoder", self.spec.variant)))
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let s = self.image_shape();
        let size = x.size();
        if size.len() != 4 || size[1..] != s.dims() {
            return Err(Error::Shape(format!("model expects [n, {s}] images, got {size:?}")));
        }
        Ok(())
    }

    /// Encoder output before normalization (for the VAE, mean and
    /// log-variance concatenated).
    pub fn encode_raw_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_images(x)?;
        Ok(self.require_encoder()?.forward_t(x, train))
    }

    /// Latent codes for a tensor batch: unit-norm rows, or the posterior
    /// mean for the VAE.
    pub fn encode_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let raw = self.encode_raw_t(x, train)?;
        Ok(match self.spec.variant {
            Variant::Vae => raw.narrow(1, 0, self.spec.latent_dim),
            _ => normalize_rows(&raw),
        })
    }

    /// VAE posterior `(mean, log_variance)`.
    pub fn encode_gaussian_t(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        if self.spec.variant != Variant::Vae {
            return Err(Error::InvalidArgument("only VAE encoders emit a Gaussian posterior".into()));
        }
        let raw = self.encode_raw_t(x, train)?;
        let d = self.spec.latent_dim;
        Ok((raw.narrow(1, 0, d), raw.narrow(1, d, d)))
    }

    /// Inference-mode codes. Raw outputs with zero norm are reported as a
    /// degenerate-latent error instead of being silently normalized.
    pub fn encode(&self, batch: &ImageBatch) -> Result<Tensor> {
        let x = batch.to_tensor(Device::Cpu);
        tch::no_grad(|| {
            let raw = self.encode_raw_t(&x, false)?;
            if self.spec.variant == Variant::Vae {
                return Ok(raw.narrow(1, 0, self.spec.latent_dim));
            }
            let norms = raw.square().sum_dim_intlist(1, false, Kind::Float).sqrt();
            let min = if norms.numel() > 0 { norms.min().double_value(&[]) } else { 1.0 };
            if min < NORM_EPS {
                return Err(Error::DegenerateLatent("encoder produced a zero vector".into()));
            }
            Ok(normalize_rows(&raw))
        })
    }

    pub fn encode_codes(&self, batch: &ImageBatch) -> Result<Vec<LatentCode>> {
        LatentCode::from_rows(&self.encode(batch)?)
    }

    pub fn decode_t(&self, z: &Tensor, train: bool) -> Result<Tensor> {
        let size = z.size();
        if size.len() != 2 || size[1] != self.spec.latent_dim {
            return Err(Error::Shape(format!(
                "generator expects [n, {}] codes, got {size:?}",
                self.spec.latent_dim
            )));
        }
        Ok(self.generator.forward_t(z, train))
    }

    /// Mixes code rows with per-row weights `alpha` on `z1`: along the
    /// sphere for unit-norm codes, linearly for the VAE's posterior means.
    pub fn interpolate_t(&self, z1: &Tensor, z2: &Tensor, alpha: &Tensor) -> Result<Tensor> {
        match self.spec.variant {
            Variant::Vae => Ok(lerp_rows(z1, z2, alpha)),
            _ => slerp_rows(z1, z2, alpha),
        }
    }

    /// Inference-mode images for a code batch.
    pub fn decode(&self, z: &Tensor) -> Result<ImageBatch> {
        if z.size().first() == Some(&0) {
            return Ok(ImageBatch::empty(self.image_shape()));
        }
        let img = tch::no_grad(|| self.decode_t(z, false))?;
        ImageBatch::from_tensor(&img, None)
    }

    pub fn decode_codes(&self, codes: &[LatentCode]) -> Result<ImageBatch> {
        if codes.is_empty() {
            return Ok(ImageBatch::empty(self.image_shape()));
        }
        let rows: Vec<Tensor> = codes.iter().map(LatentCode::to_tensor).collect();
        self.decode(&Tensor::cat(&rows, 0))
    }

    /// `decode(encode(x))` in inference mode, keeping labels.
    pub fn reconstruct(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        if batch.is_empty() {
            return Ok(batch.clone());
        }
        let z = self.encode(batch)?;
        let out = self.decode(&z)?;
        out.with_labels(batch.labels().map(<[u32]>::to_vec))
    }

    /// Discriminator scores `[n]`.
    pub fn discriminate_t(&self, x: &Tensor) -> Result<Tensor> {
        let d = self
            .discriminator
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} models have no discriminator", self.spec.variant)))?;
        Ok(d.forward_t(x, true).view([-1]))
    }

    /// All variables with `gen.` / `disc.` prefixes, sorted by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .gen_vs
            .variables()
            .into_iter()
            .map(|(k, v)| (format!("gen.{k}"), v))
            .collect();
        if let Some(vs) = &self.disc_vs {
            out.extend(vs.variables().into_iter().map(|(k, v)| (format!("disc.{k}"), v)));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Overwrites variables by name; every variable must be supplied.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let mut targets = self.named_tensors();
        if targets.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                targets.len(),
                tensors.len()
            )));
        }
        let lookup: std::collections::HashMap<&str, &Tensor> = tensors.iter().map(|(k, v)| (k.as_str(), v)).collect();
        tch::no_grad(|| {
            for (name, t) in targets.iter_mut() {
                let src = lookup
                    .get(name.as_str())
                    .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
                if src.size() != t.size() {
                    return Err(Error::Shape(format!(
                        "tensor `{name}`: stored {:?}, model {:?}",
                        src.size(),
                        t.size()
                    )));
                }
                t.copy_(src);
            }
            Ok(())
        })
    }
}
