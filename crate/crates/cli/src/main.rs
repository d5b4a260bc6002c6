//! `augint`: train, evaluate, sample from, invert, export and serve models.
//!
//! Every command that takes `--config` also accepts repeated
//! `--set key=value` overrides using dotted keys (`--set train.epochs=20`).
//! Logs go to stderr as one JSON object per line; `RUST_LOG` filters them.

mod common;
mod eval;
mod generate;
mod train;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "augint", version, about = "Augmentation-interpolative autoencoders for few-shot image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = common::parse_override)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model into a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(subcommand)]
        metric: eval::Metric,
    },
    /// Generate images from a folder of seed images.
    Generate(generate::GenerateArgs),
    /// Recover latent codes for target images.
    Invert(generate::InvertArgs),
    /// Write a portable weight archive.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        /// Directory scanned for `*.ckpt` files.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Checkpoint to load (repeatable).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Minutes before an idle session is dropped.
        #[arg(long, default_value_t = 30)]
        idle_minutes: u64,
        #[arg(long, default_value_t = 8 << 20)]
        max_body_bytes: usize,
        /// Shared bearer token; also read from AUGINT_TOKEN.
        #[arg(long, env = "AUGINT_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => train::run(&config),
        Command::Eval { metric } => eval::run(metric),
        Command::Generate(args) => generate::generate(&args),
        Command::Invert(args) => generate::invert(&args),
        Command::Export { checkpoint, out } => {
            let (bundle, _) = common::load_model(&checkpoint)?;
            let manifest = augint::checkpoint::export_weights(&bundle, &out)?;
            tracing::info!(out = %out.display(), values = manifest.total_values, "exported weights");
            println!("{}", out.display());
            Ok(())
        }
        Command::Serve {
            models,
            checkpoint,
            host,
            port,
            idle_minutes,
            max_body_bytes,
            token,
        } => {
            if models.is_none() && checkpoint.is_empty() {
                anyhow::bail!("serve needs --models <dir> or at least one --checkpoint");
            }
            let cfg = augint_serve::ServeConfig {
                models_dir: models,
                checkpoints: checkpoint,
                session_idle: Duration::from_secs(idle_minutes * 60),
                max_body_bytes,
                token,
                ..Default::default()
            };
            let state = augint_serve::AppState::load(cfg)?;
            let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
            rt.block_on(augint_serve::run(state, SocketAddr::new(host, port)))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    common::init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let reason = format!("{e:#}").replace('\n', " ");
            tracing::error!(error = %reason, "command failed");
            eprintln!("error: {reason}");
            ExitCode::FAILURE
        }
    }
}
