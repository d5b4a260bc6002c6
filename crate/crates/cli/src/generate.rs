use std::path::PathBuf;

use anyhow::Result;
use augint::datasets::ImageBatch;
use augint::grid::{save_png, tile};
use augint::inversion::{invert_batch, reconstructions, train_inverter, Inverter};
use augint::sampler::{few_shot_generate, midpoints, SeedSet};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{load_folder, load_model, resolve_config};
use crate::ConfigArgs;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    /// Random seed pairs mixed with random weights.
    Random,
    /// The midpoint of every seed pair.
    Midpoints,
}

#[derive(Args, Clone, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of seed images (at least two).
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Images to generate in `random` mode.
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, value_enum, default_value_t = Mode::Random)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of target images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Inverter and refinement settings come from `eval.inverter` and `eval.refine`.
    #[command(flatten)]
    config: ConfigArgs,
}

fn write_frames(batch: &ImageBatch, out: &std::path::Path, cols: usize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for i in 0..batch.len() {
        save_png(&batch.image(i), &out.join(format!("{i:05}.png")))?;
    }
    save_png(&tile(batch, cols, 2)?, &out.join("grid.png"))?;
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let (bundle, _) = load_model(&args.checkpoint)?;
    let images = load_folder(&args.seeds, bundle.image_shape())?;
    let seeds = SeedSet::new(&bundle, images)?;
    let (batch, cols) = match args.mode {
        Mode::Random => (few_shot_generate(&bundle, &seeds, args.count, &mut ChaCha8Rng::seed_from_u64(args.seed))?, 8),
        Mode::Midpoints => (midpoints(&bundle, &seeds)?, seeds.len().saturating_sub(1).max(1)),
    };
    write_frames(&batch, &args.out, cols)?;
    tracing::info!(images = batch.len(), seeds = seeds.len(), out = %args.out.display(), "generated");
    println!("{}", args.out.display());
    Ok(())
}

pub fn invert(args: &InvertArgs) -> Result<()> {
    let (bundle, info) = load_model(&args.checkpoint)?;
    let cfg = resolve_config(&args.config, Some(&info))?;
    let targets = load_folder(&args.images, bundle.image_shape())?;
    if targets.is_empty() {
        anyhow::bail!("no images found in {}", args.images.display());
    }
    let spec = bundle.spec();
    let mut inverter = Inverter::conv(spec.arch, spec.width, spec.latent_dim, cfg.eval.inverter.seed);
    let trace = train_inverter(&bundle, &mut inverter, &cfg.eval.inverter)?;
    tracing::info!(final_loss = trace.losses.last().copied(), "inverter trained");
    let results = invert_batch(&bundle, &inverter, &targets, &cfg.eval.refine)?;
    let refined = reconstructions(&bundle, &results)?;
    let initial_codes: Vec<_> = results.iter().map(|r| r.initial.clone()).collect();
    let initial = bundle.decode_codes(&initial_codes)?;

    std::fs::create_dir_all(&args.out)?;
    let mut rows = ImageBatch::empty(bundle.image_shape());
    let mut table = String::from("index,inverter_error,refined_error\n");
    for (i, r) in results.iter().enumerate() {
        for b in [&targets, &initial, &refined] {
            rows = rows.concat(&b.slice(i, i + 1).with_labels(None)?)?;
        }
        table.push_str(&format!("{i},{},{}\n", r.initial_error, r.final_error));
    }
    save_png(&tile(&rows, 3, 2)?, &args.out.join("target-inverter-refined.png"))?;
    std::fs::write(args.out.join("errors.csv"), table)?;
    println!("{}", args.out.display());
    Ok(())
}
