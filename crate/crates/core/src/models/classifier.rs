use tch::{nn, Device, Kind, Tensor};

use super::{init_weights, ArchId, Encoder};
use crate::datasets::ImageBatch;
use crate::error::{Error, Result};

/// Softmax classifier on the encoder trunk.
pub struct Classifier {
    vs: nn::VarStore,
    net: Encoder,
    arch: ArchId,
    width: i64,
    n_classes: i64,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("arch", &self.arch)
            .field("width", &self.width)
            .field("n_classes", &self.n_classes)
            .finish_non_exhaustive()
    }
}

impl Classifier {
    pub fn new(arch: ArchId, width: i64, n_classes: i64, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!("classifier needs at least 2 classes, got {n_classes}")));
        }
        let vs = nn::VarStore::new(Device::Cpu);
        let net = Encoder::new(vs.root() / "classifier", arch, width, n_classes, true);
        init_weights(&vs, seed);
        Ok(Classifier {
            vs,
            net,
            arch,
            width,
            n_classes,
        })
    }

    pub fn n_classes(&self) -> i64 {
        self.n_classes
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn width(&self) -> i64 {
        self.width
    }

    pub fn vs(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn feature_dim(&self) -> i64 {
        self.net.feature_dim()
    }

    pub fn logits_t(&self, x: &Tensor, train: bool) -> Tensor {
        self.net.forward_t(x, train)
    }

    /// Penultimate-layer features in inference mode, `[n, feature_dim]`.
    pub fn features(&self, batch: &ImageBatch, chunk: usize) -> Result<Tensor> {
        self.map_chunks(batch, chunk, |x| self.net.features_t(x, false))
    }

    /// Class probabilities in inference mode, `[n, n_classes]`.
    pub fn probabilities(&self, batch: &ImageBatch, chunk: usize) -> Result<Tensor> {
        self.map_chunks(batch, chunk, |x| self.net.forward_t(x, false).softmax(1, Kind::Float))
    }

    pub fn predict(&self, batch: &ImageBatch) -> Result<Vec<u32>> {
        let p = self.probabilities(batch, 256)?;
        let idx: Vec<i64> = Vec::try_from(p.argmax(1, false))?;
        Ok(idx.into_iter().map(|i| i as u32).collect())
    }

    /// Fraction of correctly classified labeled images.
    pub fn accuracy(&self, batch: &ImageBatch) -> Result<f64> {
        let labels = batch
            .labels()
            .ok_or_else(|| Error::InvalidArgument("accuracy needs labels".into()))?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(batch)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    fn map_chunks(&self, batch: &ImageBatch, chunk: usize, f: impl Fn(&Tensor) -> Tensor) -> Result<Tensor> {
        if batch.shape() != self.arch.input_shape() {
            return Err(Error::Shape(format!(
                "classifier expects {} images, got {}",
                self.arch.input_shape(),
                batch.shape()
            )));
        }
        let outs: Vec<Tensor> = tch::no_grad(|| {
            (0..batch.len())
                .step_by(chunk.max(1))
                .map(|s| f(&batch.slice(s, (s + chunk).min(batch.len())).to_tensor(Device::Cpu)))
                .collect()
        });
        if outs.is_empty() {
            return Ok(Tensor::zeros([0, self.n_classes], (Kind::Float, Device::Cpu)));
        }
        Ok(Tensor::cat(&outs, 0))
    }
}
