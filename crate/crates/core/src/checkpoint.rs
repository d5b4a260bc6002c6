//! Checkpoints and portable weight exports.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `AUGINTCK`                          |
//! | 4                | format version (`u32`)                    |
//! | 8                | header length `h` (`u64`)                 |
//! | h                | JSON header: spec, provenance, tensor map |
//! | 4 * sum(numel)   | tensor values as `f32`, header order      |
//! | 32               | SHA-256 of every preceding byte           |
//!
//! Exports are a directory holding `manifest.json` and `weights.bin`, a
//! flat little-endian `f32` array whose per-tensor offsets and shapes the
//! manifest lists, grouped by network layer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};
use crate::models::{ModelBundle, ModelSpec, Variant};

pub const MAGIC: &[u8; 8] = b"AUGINTCK";
pub const FORMAT_VERSION: u32 = 1;
pub const EXPORT_FORMAT: &str = "augint-weights";
pub const EXPORT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<i64>,
    /// Offset into the value array, in elements.
    pub offset: u64,
    pub count: u64,
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// Metadata of a loaded checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub spec: ModelSpec,
    pub provenance: Provenance,
    pub tensor_count: usize,
    /// Hex SHA-256 of the file, a stable checkpoint id.
    pub digest: String,
}

fn flatten(tensors: &[(String, Tensor)]) -> Result<(Vec<TensorEntry>, Vec<f32>)> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut values = Vec::new();
    for (name, t) in tensors {
        let v: Vec<f32> = Vec::try_from(t.detach().to_kind(Kind::Float).contiguous().view(-1))?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.size(),
            offset: values.len() as u64,
            count: v.len() as u64,
        });
        values.extend(v);
    }
    Ok((entries, values))
}

fn unflatten(entries: &[TensorEntry], values: &[f32]) -> Result<Vec<(String, Tensor)>> {
    entries
        .iter()
        .map(|e| {
            let (start, end) = (e.offset as usize, (e.offset + e.count) as usize);
            let numel: i64 = e.shape.iter().product();
            if end > values.len() || numel as u64 != e.count {
                return Err(Error::Format(format!("tensor `{}` lies outside the value array", e.name)));
            }
            Ok((e.name.clone(), Tensor::from_slice(&values[start..end]).view(e.shape.as_slice())))
        })
        .collect()
}

fn le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("value array length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_bytes(bundle: &ModelBundle, provenance: &Provenance) -> Result<Vec<u8>> {
    let (tensors, values) = flatten(&bundle.named_tensors())?;
    let header = serde_json::to_vec(&Header {
        spec: *bundle.spec(),
        provenance: provenance.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 4 * values.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&le_bytes(&values));
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(bundle: &ModelBundle, provenance: &Provenance, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(bundle, provenance)?)
}

/// Validates framing and checksum and parses the header.
fn parse_verified(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < PREFIX_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&body[PREFIX_LEN..header_end])?;
    Ok((header, &body[header_end..]))
}

fn info_of(header: Header, bytes: &[u8]) -> CheckpointInfo {
    CheckpointInfo {
        spec: header.spec,
        provenance: header.provenance,
        tensor_count: header.tensors.len(),
        digest: hex::encode(Sha256::digest(bytes)),
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ModelBundle, CheckpointInfo)> {
    let (header, value_bytes) = parse_verified(bytes)?;
    let values = from_le_bytes(value_bytes)?;
    let tensors = unflatten(&header.tensors, &values)?;
    let mut bundle = ModelBundle::build(header.spec, 0)?;
    bundle.load_named(&tensors)?;
    Ok((bundle, info_of(header, bytes)))
}

/// Metadata of a checkpoint file without building the networks.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointInfo> {
    let bytes = std::fs::read(path)?;
    let (header, _) = parse_verified(&bytes)?;
    Ok(info_of(header, &bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelBundle, CheckpointInfo)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint that must hold `expected`.
pub fn load_checkpoint_as(path: &Path, expected: Variant) -> Result<(ModelBundle, CheckpointInfo)> {
    let (bundle, info) = load_checkpoint(path)?;
    if info.spec.variant != expected {
        return Err(Error::VariantMismatch {
            found: info.spec.variant.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok((bundle, info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub network: String,
    pub index: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub format: String,
    pub version: u32,
    pub byte_order: String,
    pub dtype: String,
    pub spec: ModelSpec,
    /// Layers per network, as built for the model spec.
    pub layer_counts: BTreeMap<String, usize>,
    pub layers: Vec<LayerEntry>,
    pub total_values: u64,
    /// Hex SHA-256 of `weights.bin`.
    pub weights_sha256: String,
}

impl ExportManifest {
    pub fn layer_count(&self, network: &str) -> usize {
        self.layers.iter().filter(|l| l.network == network).count()
    }
}

/// `(network, layer index)` of a variable named `gen.encoder.l3.bn.weight`.
fn layer_of(name: &str) -> Result<(String, usize)> {
    let parts: Vec<&str> = name.split('.').collect();
    let index = parts
        .get(2)
        .and_then(|l| l.strip_prefix('l'))
        .and_then(|i| i.parse().ok());
    match (parts.get(1), index) {
        (Some(net), Some(i)) => Ok((net.to_string(), i)),
        _ => Err(Error::Format(format!("variable `{name}` has no layer index"))),
    }
}

/// Writes `manifest.json` and `weights.bin` into `dir`.
pub fn export_weights(bundle: &ModelBundle, dir: &Path) -> Result<ExportManifest> {
    let (entries, values) = flatten(&bundle.named_tensors())?;
    let mut grouped: BTreeMap<(String, usize), Vec<TensorEntry>> = BTreeMap::new();
    for e in entries {
        grouped.entry(layer_of(&e.name)?).or_default().push(e);
    }
    let bytes = le_bytes(&values);
    let manifest = ExportManifest {
        format: EXPORT_FORMAT.into(),
        version: EXPORT_VERSION,
        byte_order: "little".into(),
        dtype: "f32".into(),
        spec: *bundle.spec(),
        layer_counts: bundle.layer_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        layers: grouped
            .into_iter()
            .map(|((network, index), tensors)| LayerEntry { network, index, tensors })
            .collect(),
        total_values: values.len() as u64,
        weights_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("weights.bin"), &bytes)?;
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Rebuilds a bundle from an export directory.
pub fn import_weights(dir: &Path) -> Result<(ModelBundle, ExportManifest)> {
    let manifest: ExportManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != EXPORT_FORMAT || manifest.version != EXPORT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: EXPORT_VERSION,
        });
    }
    let bytes = std::fs::read(dir.join("weights.bin"))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.weights_sha256 {
        return Err(Error::Checksum);
    }
    let values = from_le_bytes(&bytes)?;
    let entries: Vec<TensorEntry> = manifest.layers.iter().flat_map(|l| l.tensors.clone()).collect();
    let mut bundle = ModelBundle::build(manifest.spec, 0)?;
    bundle.load_named(&unflatten(&entries, &values)?)?;
    Ok((bundle, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::letters::generate_letters;
    use crate::models::ArchId;

    fn bundle(variant: Variant) -> ModelBundle {
        ModelBundle::build(ModelSpec::new(ArchId::Infogan28, 32, variant).with_width(4), 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let b = bundle(Variant::AugIntAe);
        let prov = Provenance {
            dataset: "mnist-sample-train".into(),
            epoch: 3,
            step: 99,
            seed: 1,
        };
        save_checkpoint(&b, &prov, &path).unwrap();
        let (loaded, info) = load_checkpoint(&path).unwrap();
        assert_eq!(info.provenance, prov);
        assert_eq!(inspect_checkpoint(&path).unwrap(), info);
        let x = generate_letters(1, 0, &Default::default()).slice(0, 5);
        assert!(b.encode(&x).unwrap().equal(&loaded.encode(&x).unwrap()));
        assert_eq!(b.reconstruct(&x).unwrap().data(), loaded.reconstruct(&x).unwrap().data());
        for ((na, ta), (nb, tb)) in b.named_tensors().iter().zip(&loaded.named_tensors()) {
            assert_eq!(na, nb);
            assert!(ta.equal(tb));
        }
    }

    #[test]
    fn corruption_version_and_variant_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&bundle(Variant::Vae), &Provenance::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Checksum)));
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(matches!(checkpoint_from_bytes(&flipped), Err(Error::Checksum)));
        let mut future = bytes.clone();
        future[8] = 9;
        assert!(matches!(checkpoint_from_bytes(&future), Err(Error::Version { found: 9, .. })));
        assert!(matches!(
            load_checkpoint_as(&path, Variant::AugIntAe),
            Err(Error::VariantMismatch { .. })
        ));
        load_checkpoint_as(&path, Variant::Vae).unwrap();
    }

    #[test]
    fn export_manifest_and_reimport() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(Variant::AugIntAe);
        let m = export_weights(&b, dir.path()).unwrap();
        for (net, count) in b.layer_counts() {
            assert_eq!(m.layer_count(net), count, "{net}");
            assert_eq!(m.layer_counts[net], count);
        }
        assert_eq!(m.spec.latent_dim, 32);
        assert_eq!(std::fs::metadata(dir.path().join("weights.bin")).unwrap().len(), 4 * m.total_values);
        let (back, _) = import_weights(dir.path()).unwrap();
        let x = generate_letters(1, 1, &Default::default()).slice(0, 4);
        assert_eq!(b.reconstruct(&x).unwrap().data(), back.reconstruct(&x).unwrap().data());
    }
}
