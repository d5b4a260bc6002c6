use std::path::PathBuf;

use anyhow::{Context, Result};
use augint::config::RunConfig;
use augint::datasets::{ImageBatch, SplitId};
use augint::evalsuite::{
    config_digest, fid_protocol, hallucination_experiment, misclassification_rate, noise_analysis, protocol_images, recon_error,
    train_domain_classifier, DomainClassifier, EvalReport, FeatureExtractor, Regime, TorchScriptExtractor,
};
use augint::models::{ModelBundle, Variant};
use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{emit, load_images, load_model, resolve_config};
use crate::ConfigArgs;

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the report table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Metric {
    /// Mean per-pixel reconstruction error (255 scale) on held-out images.
    Recon {
        #[command(flatten)]
        args: EvalArgs,
        /// Splits to measure; defaults to the held-out train-domain and novel-domain splits.
        #[arg(long)]
        split: Vec<SplitId>,
    },
    /// FID between novel-domain images and generated samples.
    Fid {
        #[command(flatten)]
        args: EvalArgs,
        /// Directory holding `inception_pool3.pt`; without it the domain
        /// classifier's features are used and labeled as a proxy.
        #[arg(long)]
        extractor_dir: Option<PathBuf>,
    },
    /// Percent of generated samples a domain classifier assigns to the training domain.
    Domain {
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Reconstruction error of noise at increasing spatial frequency.
    Noise {
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Novel-domain classifier accuracy with interpolation-based augmentation.
    Hallucinate {
        #[command(flatten)]
        args: EvalArgs,
        /// Plain autoencoder checkpoint for the `ae` regime.
        #[arg(long)]
        ae_checkpoint: Option<PathBuf>,
    },
}

struct EvalContext {
    cfg: RunConfig,
    bundle: ModelBundle,
    out: Option<PathBuf>,
}

fn open(args: &EvalArgs) -> Result<EvalContext> {
    let (bundle, info) = load_model(&args.checkpoint)?;
    let cfg = resolve_config(&args.config, Some(&info))?;
    if cfg.variant != bundle.variant() {
        anyhow::bail!("config is for `{}` but the checkpoint holds `{}`", cfg.variant, bundle.variant());
    }
    Ok(EvalContext {
        cfg,
        bundle,
        out: args.out.clone(),
    })
}

fn held_out(cfg: &RunConfig) -> Result<(ImageBatch, ImageBatch)> {
    let train = load_images(cfg.train_split()?.test_split(), cfg.data.limit)?;
    let novel = load_images(cfg.novel_split()?.test_split(), cfg.data.limit)?;
    Ok((train, novel))
}

fn table(rows: &[EvalReport]) -> String {
    let mut s = format!("{}\n", EvalReport::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn domain_classifier(cfg: &RunConfig) -> Result<DomainClassifier> {
    let train = load_images(cfg.train_split()?, cfg.data.limit)?;
    let novel = load_images(cfg.novel_split()?, cfg.data.limit)?;
    let clf = train_domain_classifier(&train, &novel, &cfg.eval.domain)?;
    tracing::info!(
        heldout_accuracy = clf.heldout_accuracy,
        train_domain_error = clf.train_domain_error,
        novel_domain_error = clf.novel_domain_error,
        "domain classifier trained"
    );
    Ok(clf)
}

pub fn run(metric: Metric) -> Result<()> {
    match metric {
        Metric::Recon { args, split } => {
            let c = open(&args)?;
            let splits = if split.is_empty() {
                vec![c.cfg.train_split()?.test_split(), c.cfg.novel_split()?.test_split()]
            } else {
                split
            };
            let mut rows = Vec::new();
            for s in splits {
                let data = load_images(s, c.cfg.data.limit)?;
                rows.push(EvalReport {
                    metric: format!("recon/{}/{}", c.bundle.variant(), s),
                    value: recon_error(&c.bundle, &data)?,
                    ci95: None,
                    n_real: data.len(),
                    n_generated: 0,
                    extractor: None,
                    seed: c.cfg.seed,
                    config_digest: config_digest(c.bundle.spec())?,
                });
            }
            emit(&table(&rows), c.out.as_deref())
        }
        Metric::Fid { args, extractor_dir } => {
            let c = open(&args)?;
            let (_, novel) = held_out(&c.cfg)?;
            let proxy;
            let inception;
            let extractor: &dyn FeatureExtractor = match &extractor_dir {
                Some(dir) => {
                    inception = TorchScriptExtractor::load(dir)?;
                    &inception
                }
                None => {
                    tracing::warn!("no Inception network given; using the domain-classifier proxy extractor");
                    proxy = domain_classifier(&c.cfg)?;
                    &proxy
                }
            };
            let protocol = &c.cfg.eval.fid;
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            let report = fid_protocol(&c.bundle, &novel, extractor, protocol, &mut rng)?;
            emit(&table(&[report]), c.out.as_deref())
        }
        Metric::Domain { args } => {
            let c = open(&args)?;
            let (_, novel) = held_out(&c.cfg)?;
            let clf = domain_classifier(&c.cfg)?;
            let protocol = &c.cfg.eval.fid;
            let generated = protocol_images(&c.bundle, &novel, protocol, &mut ChaCha8Rng::seed_from_u64(protocol.seed))?;
            let report = EvalReport {
                metric: format!("misclassification/{}", c.bundle.variant()),
                value: misclassification_rate(&clf, &generated)?,
                ci95: None,
                n_real: 2 * clf.per_domain,
                n_generated: generated.len(),
                extractor: Some(clf.id()),
                seed: protocol.seed,
                config_digest: config_digest(&(c.bundle.spec(), protocol, &c.cfg.eval.domain))?,
            };
            emit(&table(&[report]), c.out.as_deref())
        }
        Metric::Noise { args } => {
            let c = open(&args)?;
            let (_, novel) = held_out(&c.cfg)?;
            let curve = noise_analysis(&c.bundle, &novel, &c.cfg.eval.noise)?;
            emit(&curve.to_csv(), c.out.as_deref())
        }
        Metric::Hallucinate { args, ae_checkpoint } => {
            let c = open(&args)?;
            if c.bundle.variant() != Variant::AugIntAe {
                anyhow::bail!("hallucinate takes an augintae checkpoint, got `{}`", c.bundle.variant());
            }
            let ae = match &ae_checkpoint {
                Some(p) => Some(augint::checkpoint::load_checkpoint_as(p, Variant::Ae).with_context(|| format!("loading {}", p.display()))?.0),
                None => None,
            };
            let novel = c.cfg.novel_split()?;
            let train = load_images(novel, c.cfg.data.limit)?;
            let test = load_images(novel.test_split(), c.cfg.data.limit)?;
            let n_classes = train
                .labels()
                .and_then(|l| l.iter().max())
                .map(|&m| m as usize + 1)
                .context("the novel split has no labels")?;
            let mut regimes = vec![(Regime::None, None), (Regime::Mixup, None)];
            if let Some(ae) = &ae {
                regimes.push((Regime::Ae, Some(ae)));
            }
            regimes.push((Regime::AugIntAe, Some(&c.bundle)));
            let hc = &c.cfg.eval.hallucination;
            let rows = hallucination_experiment(&train, &test, n_classes, &regimes, hc)?;
            let mut text = String::from("regime,epochs,runs,mean_accuracy,ci95,accuracies\n");
            for r in rows {
                let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.2}")).collect();
                text.push_str(&format!(
                    "{},{},{},{:.3},{:.3},{}\n",
                    r.regime.name(),
                    r.epochs,
                    r.accuracies.len(),
                    r.mean,
                    r.ci95,
                    accs.join(" ")
                ));
            }
            emit(&text, c.out.as_deref())
        }
    }
}
