//! Convolutional encoder and generator stacks.
//!
//! Layer table for base width `w` (template default 64), input channels `C`:
//!
//! | arch      | encoder                                                     | generator                                              |
//! |-----------|-------------------------------------------------------------|--------------------------------------------------------|
//! | infogan28 | conv C->w, conv w->2w, fc 2w*7*7->16w, fc 16w->out          | fc z->16w, fc 16w->2w*7*7, deconv 2w->w, deconv w->C   |
//! | dcgan64   | conv C->w, w->2w, 2w->4w, 4w->8w, fc 8w*4*4->out            | fc z->8w*4*4, deconv 8w->4w, 4w->2w, 2w->w, w->C       |
//! | dcgan128  | conv C->w/2, w/2->w, then as dcgan64                         | as dcgan64, then deconv w->w/2, w/2->C                 |
//!
//! Convolutions are 4x4, stride 2, padding 1. Encoder activations are
//! LeakyReLU(0.2), generator activations ReLU, generator output tanh. Batch
//! norm follows every hidden layer except the first encoder convolution;
//! discriminators are built without it so each score depends on one image
//! only. The final 4x4 "valid" convolution of the DCGAN templates is
//! expressed as the equivalent fully connected layer.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, ModuleT};
use tch::Tensor;

use crate::datasets::ImageShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    Infogan28,
    Dcgan64,
    Dcgan128,
}

impl ArchId {
    pub fn name(self) -> &'static str {
        match self {
            ArchId::Infogan28 => "infogan28",
            ArchId::Dcgan64 => "dcgan64",
            ArchId::Dcgan128 => "dcgan128",
        }
    }

    /// Image shape the architecture consumes and produces.
    pub fn input_shape(self) -> ImageShape {
        match self {
            ArchId::Infogan28 => ImageShape::new(1, 28, 28),
            ArchId::Dcgan64 => ImageShape::new(3, 64, 64),
            ArchId::Dcgan128 => ImageShape::new(3, 128, 128),
        }
    }

    /// Architecture matching an image shape, if any.
    pub fn for_shape(shape: ImageShape) -> Result<Self> {
        [ArchId::Infogan28, ArchId::Dcgan64, ArchId::Dcgan128]
            .into_iter()
            .find(|a| a.input_shape() == shape)
            .ok_or_else(|| Error::UnsupportedArch(format!("no architecture for {shape} images")))
    }

    /// Default latent size: 32 for handwritten characters, 512 otherwise.
    pub fn default_latent_dim(self) -> i64 {
        match self {
            ArchId::Infogan28 => 32,
            _ => 512,
        }
    }
}

impl std::str::FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infogan28" => Ok(ArchId::Infogan28),
            "dcgan64" => Ok(ArchId::Dcgan64),
            "dcgan128" => Ok(ArchId::Dcgan128),
            other => Err(Error::UnsupportedArch(other.to_string())),
        }
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn lrelu(x: &Tensor) -> Tensor {
    x.maximum(&(x * 0.2))
}

fn conv_cfg() -> nn::ConvConfig {
    nn::ConvConfig {
        stride: 2,
        padding: 1,
        ..Default::default()
    }
}

fn deconv_cfg() -> nn::ConvTransposeConfig {
    nn::ConvTransposeConfig {
        stride: 2,
        padding: 1,
        ..Default::default()
    }
}

/// Convolutional trunk plus one output layer. Used for encoders,
/// discriminators, critics, classifiers and inverters.
#[derive(Debug)]
pub struct Encoder {
    convs: Vec<(nn::Conv2D, Option<nn::BatchNorm>)>,
    hidden: Option<(nn::Linear, Option<nn::BatchNorm>)>,
    out: nn::Linear,
    input: ImageShape,
    out_dim: i64,
    feature_dim: i64,
}

impl Encoder {
    pub fn new<'a>(
        p: impl Borrow<nn::Path<'a>>,
        arch: ArchId,
        width: i64,
        out_dim: i64,
        batch_norm: bool,
    ) -> Self {
        let p = p.borrow();
        let input = arch.input_shape();
        let c = input.channels as i64;
        let w = width;
        let chans: Vec<i64> = match arch {
            ArchId::Infogan28 => vec![c, w, 2 * w],
            ArchId::Dcgan64 => vec![c, w, 2 * w, 4 * w, 8 * w],
            ArchId::Dcgan128 => vec![c, w / 2, w, 2 * w, 4 * w, 8 * w],
        };
        let mut convs = Vec::new();
        for (i, pair) in chans.windows(2).enumerate() {
            let lp = p / format!("l{i}");
            let conv = nn::conv2d(&lp, pair[0], pair[1], 4, conv_cfg());
            let bn = (batch_norm && i > 0).then(|| nn::batch_norm2d(&lp / "bn", pair[1], Default::default()));
            convs.push((conv, bn));
        }
        let side = (input.height >> (chans.len() - 1)) as i64;
        let flat = chans[chans.len() - 1] * side * side;
        let n = convs.len();
        let (hidden, feature_dim) = match arch {
            ArchId::Infogan28 => {
                let lp = p / format!("l{n}");
                let fc = nn::linear(&lp, flat, 16 * w, Default::default());
                let bn = batch_norm.then(|| nn::batch_norm1d(&lp / "bn", 16 * w, Default::default()));
                (Some((fc, bn)), 16 * w)
            }
            _ => (None, flat),
        };
        let out_idx = n + hidden.is_some() as usize;
        let out = nn::linear(p / format!("l{out_idx}"), feature_dim, out_dim, Default::default());
        Encoder {
            convs,
            hidden,
            out,
            input,
            out_dim,
            feature_dim,
        }
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn out_dim(&self) -> i64 {
        self.out_dim
    }

    pub fn feature_dim(&self) -> i64 {
        self.feature_dim
    }

    pub fn layer_count(&self) -> usize {
        self.convs.len() + self.hidden.is_some() as usize + 1
    }

    /// Penultimate activations.
    pub fn features_t(&self, x: &Tensor, train: bool) -> Tensor {
        let mut h = x.shallow_clone();
        for (conv, bn) in &self.convs {
            h = conv.forward(&h);
            if let Some(bn) = bn {
                h = bn.forward_t(&h, train);
            }
            h = lrelu(&h);
        }
        h = h.flatten(1, -1);
        if let Some((fc, bn)) = &self.hidden {
            h = fc.forward(&h);
            if let Some(bn) = bn {
                h = bn.forward_t(&h, train);
            }
            h = lrelu(&h);
        }
        h
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        self.out.forward(&self.features_t(x, train))
    }
}

/// Fully connected head followed by transposed convolutions and tanh.
#[derive(Debug)]
pub struct Generator {
    fcs: Vec<(nn::Linear, nn::BatchNorm)>,
    deconvs: Vec<(nn::ConvTranspose2D, Option<nn::BatchNorm>)>,
    reshape: [i64; 3],
    latent_dim: i64,
    output: ImageShape,
}

impl Generator {
    pub fn new<'a>(p: impl Borrow<nn::Path<'a>>, arch: ArchId, width: i64, latent_dim: i64) -> Self {
        let p = p.borrow();
        let output = arch.input_shape();
        let c = output.channels as i64;
        let w = width;
        let (fc_dims, reshape, chans): (Vec<i64>, [i64; 3], Vec<i64>) = match arch {
            ArchId::Infogan28 => (vec![latent_dim, 16 * w, 2 * w * 49], [2 * w, 7, 7], vec![2 * w, w, c]),
            ArchId::Dcgan64 => (
                vec![latent_dim, 8 * w * 16],
                [8 * w, 4, 4],
                vec![8 * w, 4 * w, 2 * w, w, c],
            ),
            ArchId::Dcgan128 => (
                vec![latent_dim, 8 * w * 16],
                [8 * w, 4, 4],
                vec![8 * w, 4 * w, 2 * w, w, w / 2, c],
            ),
        };
        let mut fcs = Vec::new();
        for (i, pair) in fc_dims.windows(2).enumerate() {
            let lp = p / format!("l{i}");
            let fc = nn::linear(&lp, pair[0], pair[1], Default::default());
            fcs.push((fc, nn::batch_norm1d(&lp / "bn", pair[1], Default::default())));
        }
        let offset = fcs.len();
        let last = chans.len() - 2;
        let mut deconvs = Vec::new();
        for (i, pair) in chans.windows(2).enumerate() {
            let lp = p / format!("l{}", offset + i);
            let d = nn::conv_transpose2d(&lp, pair[0], pair[1], 4, deconv_cfg());
            let bn = (i < last).then(|| nn::batch_norm2d(&lp / "bn", pair[1], Default::default()));
            deconvs.push((d, bn));
        }
        Generator {
            fcs,
            deconvs,
            reshape,
            latent_dim,
            output,
        }
    }

    pub fn latent_dim(&self) -> i64 {
        self.latent_dim
    }

    pub fn output_shape(&self) -> ImageShape {
        self.output
    }

    pub fn layer_count(&self) -> usize {
        self.fcs.len() + self.deconvs.len()
    }

    pub fn forward_t(&self, z: &Tensor, train: bool) -> Tensor {
        let mut h = z.shallow_clone();
        for (fc, bn) in &self.fcs {
            h = bn.forward_t(&fc.forward(&h), train).relu();
        }
        let [c, hh, ww] = self.reshape;
        h = h.view([-1, c, hh, ww]);
        for (d, bn) in &self.deconvs {
            h = d.forward(&h);
            h = match bn {
                Some(bn) => bn.forward_t(&h, train).relu(),
                None => h.tanh(),
            };
        }
        h
    }
}
