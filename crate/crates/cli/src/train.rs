use anyhow::{Context, Result};
use augint::checkpoint::{save_checkpoint, Provenance};
use augint::datasets::ImageBatch;
use augint::grid::{save_png, tile};
use augint::models::ModelBundle;
use augint::rundir::RunDir;
use augint::sampler::{interpolation_path, sample_from_noise};
use augint::training::{LossReport, Trainer};
use augint::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{load_images, resolve_config};

const PREVIEW_PAIRS: usize = 4;
const PREVIEW_STEPS: usize = 8;

/// Interpolation paths between fixed training images, or fixed noise
/// samples for models without an encoder.
fn preview(bundle: &ModelBundle, data: &ImageBatch) -> augint::Result<augint::datasets::Image> {
    let frames = if bundle.variant().has_encoder() {
        let mut out = ImageBatch::empty(bundle.image_shape());
        for p in 0..PREVIEW_PAIRS.min(data.len() / 2) {
            let path = interpolation_path(bundle, &data.image(2 * p), &data.image(2 * p + 1), PREVIEW_STEPS)?;
            out = out.concat(&path)?;
        }
        out
    } else {
        sample_from_noise(bundle, PREVIEW_PAIRS * PREVIEW_STEPS, &mut ChaCha8Rng::seed_from_u64(0))?
    };
    tile(&frames, PREVIEW_STEPS, 2)
}

fn write_trace(run: &RunDir, name: &str, history: &[LossReport]) -> Result<()> {
    let mut text = String::from("step,epoch,l_recon,l_adv,l_total,k\n");
    for r in history {
        text.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.epoch, r.l_recon, r.l_adv, r.l_total, r.k));
    }
    std::fs::write(run.root().join("diagnostics").join(name), text)?;
    Ok(())
}

pub fn run(args: &crate::ConfigArgs) -> Result<()> {
    let cfg = resolve_config(args, None)?;
    let split = cfg.train_split()?;
    let data = load_images(split, cfg.data.limit)?;
    let run = RunDir::create(&cfg.output_dir, &cfg).with_context(|| format!("creating run directory {}", cfg.output_dir.display()))?;
    tracing::info!(run = %run.root().display(), variant = %cfg.variant, images = data.len(), "training");

    let bundle = ModelBundle::build(cfg.model, cfg.seed)?;
    let provenance = |epoch: usize, step: usize| Provenance {
        dataset: split.name().to_string(),
        epoch,
        step,
        seed: cfg.seed,
    };
    let last_good = run.root().join("checkpoints").join("last-good.ckpt");
    save_checkpoint(&bundle, &provenance(0, 0), &last_good)?;
    let fixed = data.slice(0, (2 * PREVIEW_PAIRS).min(data.len()));
    let mut trainer = Trainer::new(bundle, cfg.train.clone())?;
    let mut logged = 0;
    let every = cfg.checkpoint_every;
    let mut hook = |t: &Trainer, epoch: usize| -> augint::Result<()> {
        run.append_metrics(&t.history()[logged..]).map_err(|e| Error::Format(format!("metrics: {e}")))?;
        logged = t.history().len();
        let prov = provenance(epoch + 1, logged);
        save_png(&preview(t.bundle(), &fixed)?, &run.sample_path(epoch + 1))?;
        save_checkpoint(t.bundle(), &prov, &last_good)?;
        if (epoch + 1) % every == 0 {
            save_checkpoint(t.bundle(), &prov, &run.checkpoint_path(epoch + 1))?;
        }
        Ok(())
    };
    match trainer.fit(&data, Some(&mut hook)) {
        Ok(summary) => {
            let final_path = run.final_checkpoint();
            save_checkpoint(trainer.bundle(), &provenance(summary.epochs, summary.history.len()), &final_path)?;
            tracing::info!(checkpoint = %final_path.display(), steps = summary.history.len(), final_k = summary.final_k, "training finished");
            println!("{}", final_path.display());
            Ok(())
        }
        Err(Error::Diverged { step, reason }) => {
            std::fs::create_dir_all(run.root().join("diagnostics"))?;
            run.append_metrics(&trainer.history()[logged..])?;
            write_trace(&run, "loss_trace.csv", trainer.history())?;
            let (good, _) = augint::checkpoint::load_checkpoint(&last_good)?;
            save_png(&preview(&good, &fixed)?, &run.root().join("diagnostics").join("last-good-samples.png"))?;
            anyhow::bail!(
                "training diverged at step {step}; last good checkpoint {} and diagnostics in {} ({reason})",
                last_good.display(),
                run.root().join("diagnostics").display()
            )
        }
        Err(e) => Err(e.into()),
    }
}
