use std::path::Path;

use anyhow::{Context, Result};
use augint::checkpoint::{load_checkpoint, CheckpointInfo};
use augint::config::{parse_config, parse_config_str, RunConfig};
use augint::datasets::{load_split_id, DataConfig, ImageBatch, ImageShape, PreprocessSpec, SplitId};
use augint::models::ModelBundle;
use tracing_subscriber::EnvFilter;

use crate::ConfigArgs;

pub fn init_logging() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.trim().to_string(), v.to_string()))
}

/// The config file if given, else reference defaults for the checkpoint's
/// variant and training split; overrides apply either way.
pub fn resolve_config(args: &ConfigArgs, info: Option<&CheckpointInfo>) -> Result<RunConfig> {
    match (&args.config, info) {
        (Some(path), _) => parse_config(path, &args.overrides).with_context(|| format!("config {}", path.display())),
        (None, Some(info)) => {
            let text = format!(
                "variant = \"{}\"\n[data]\ntrain = \"{}\"\n[model]\nwidth = {}\nlatent_dim = {}\n",
                info.spec.variant, info.provenance.dataset, info.spec.width, info.spec.latent_dim
            );
            Ok(parse_config_str(&text, &args.overrides)?)
        }
        (None, None) => anyhow::bail!("--config is required"),
    }
}

pub fn load_model(path: &Path) -> Result<(ModelBundle, CheckpointInfo)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn load_images(split: SplitId, limit: Option<usize>) -> Result<ImageBatch> {
    let cfg = DataConfig::from_env().with_limit(limit);
    let loaded = load_split_id(split, &cfg)?;
    tracing::info!(split = %split, images = loaded.images.len(), skipped = loaded.skipped, "loaded split");
    Ok(loaded.images)
}

/// Preprocessing for user image folders at a model's resolution.
pub fn folder_spec(shape: ImageShape) -> PreprocessSpec {
    let base = match (shape.channels, shape.height) {
        (1, _) => PreprocessSpec::handwritten(),
        (_, 128) => PreprocessSpec::celeba(),
        _ => PreprocessSpec::cifar(),
    };
    PreprocessSpec { target: shape, ..base }
}

pub fn load_folder(dir: &Path, shape: ImageShape) -> Result<ImageBatch> {
    let (batch, report) = augint::datasets::sources::load_image_folder(dir, &folder_spec(shape))
        .with_context(|| format!("reading images from {}", dir.display()))?;
    if report.skipped > 0 {
        tracing::warn!(skipped = report.skipped, dir = %dir.display(), "skipped undecodable files");
    }
    Ok(batch)
}

/// Writes `text` to `path` when given and always prints it.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{text}");
    Ok(())
}
