//! Declarative run configuration.
//!
//! A config file needs only `variant` and `data.train`; everything else is
//! filled with reference defaults that depend on those two keys, and the
//! resolved result is what gets archived with the run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::augment::AugmentRangeSpec;
use crate::datasets::SplitId;
use crate::error::{Error, Result};
use crate::evalsuite::{DomainConfig, FidProtocol, HallucinationConfig, NoiseConfig};
use crate::inversion::{InverterConfig, RefineConfig};
use crate::models::{ArchId, ModelSpec, Variant};
use crate::training::{TrainConfig, DEFAULT_EPOCHS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training-domain split.
    pub train: String,
    /// Novel-domain split used for evaluation.
    pub novel: String,
    /// Optional cap on images loaded per split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub fid: FidProtocol,
    pub domain: DomainConfig,
    pub noise: NoiseConfig,
    pub hallucination: HallucinationConfig,
    pub inverter: InverterConfig,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub variant: Variant,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Epoch interval of numbered checkpoints in the run directory.
    pub checkpoint_every: usize,
    pub data: DataSection,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

/// Augmentation ranges suited to a split's image type.
pub fn default_augment(split: SplitId) -> AugmentRangeSpec {
    let target = split.preprocess_spec().target;
    match (target.channels, target.height) {
        (1, _) => AugmentRangeSpec::handwritten(),
        (_, 128) => AugmentRangeSpec::celeba(),
        _ => AugmentRangeSpec::cifar(),
    }
}

impl RunConfig {
    /// Reference defaults for `variant` trained on `train`.
    pub fn defaults(variant: Variant, train: SplitId, epochs: Option<usize>) -> Result<Self> {
        let shape = train.preprocess_spec().target;
        let arch = ArchId::for_shape(shape)?;
        let model = ModelSpec::new(arch, arch.default_latent_dim(), variant);
        let mut tc = TrainConfig::new(variant, shape.channels);
        if let Some(e) = epochs {
            tc = tc.with_epochs(e);
        }
        tc.augment = default_augment(train);
        let novel = train.paired();
        Ok(RunConfig {
            command: "train".into(),
            variant,
            seed: 0,
            output_dir: PathBuf::from("runs").join(format!("{}-{}", variant, train.name())),
            checkpoint_every: 10,
            data: DataSection {
                train: train.name().into(),
                novel: novel.name().into(),
                limit: None,
            },
            model,
            train: tc,
            eval: EvalSection {
                fid: FidProtocol::default(),
                domain: DomainConfig::new(5000, DEFAULT_EPOCHS / 10, 64),
                noise: NoiseConfig::new(shape.height),
                hallucination: HallucinationConfig::default(),
                inverter: InverterConfig::default(),
                refine: RefineConfig::default(),
            },
        })
    }

    pub fn train_split(&self) -> Result<SplitId> {
        SplitId::from_str(&self.data.train)
    }

    pub fn novel_split(&self) -> Result<SplitId> {
        SplitId::from_str(&self.data.novel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.variant != self.variant || self.model.variant != self.variant {
            return Err(Error::Config(format!(
                "train.variant and model.variant must equal variant = \"{}\"",
                self.variant
            )));
        }
        let train = self.train_split()?;
        self.novel_split()?;
        let shape = train.preprocess_spec().target;
        if self.model.arch.input_shape() != shape {
            return Err(Error::Config(format!(
                "model.arch {} does not take {} images of {}",
                self.model.arch, shape, self.data.train
            )));
        }
        if self.train.augment.has_color() && shape.channels != 3 {
            return Err(Error::Config("train.augment: color jitter needs 3-channel images".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved config to `dir/config.toml`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

/// Sets a dotted key such as `train.epochs` in a TOML table. The value is
/// parsed as TOML and taken as a plain string if that fails.
pub fn set_dotted(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn get_path<'a>(t: &'a Table, path: &[&str]) -> Option<&'a Value> {
    let (first, rest) = path.split_first()?;
    let v = t.get(*first)?;
    if rest.is_empty() {
        Some(v)
    } else {
        get_path(v.as_table()?, rest)
    }
}

/// Parses config text, applies `key=value` overrides, fills defaults and
/// validates. Unknown keys are rejected.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        set_dotted(&mut user, k, v)?;
    }
    let variant = match get_path(&user, &["variant"]) {
        Some(Value::String(s)) => Variant::from_str(s).map_err(|e| Error::Config(format!("variant: {e}")))?,
        Some(_) => return Err(Error::Config("variant must be a string".into())),
        None => return Err(Error::Config("missing required key `variant`".into())),
    };
    let train = match get_path(&user, &["data", "train"]) {
        Some(Value::String(s)) => SplitId::from_str(s).map_err(|e| Error::Config(format!("data.train: {e}")))?,
        Some(_) => return Err(Error::Config("data.train must be a string".into())),
        None => return Err(Error::Config("missing required key `data.train`".into())),
    };
    let epochs = match get_path(&user, &["train", "epochs"]) {
        Some(Value::Integer(e)) if *e >= 0 => Some(*e as usize),
        Some(_) => return Err(Error::Config("train.epochs must be a non-negative integer".into())),
        None => None,
    };
    let defaults = RunConfig::defaults(variant, train, epochs)?;
    let mut merged = Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut merged, user);
    // Round-trip through text so errors name the offending key.
    let text = toml::to_string(&merged).map_err(|e| Error::Config(e.to_string()))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, overrides)
}
