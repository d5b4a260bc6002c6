//! Layout of a run directory:
//!
//! ```text
//! <run>/config.toml        resolved configuration
//! <run>/metrics.csv        one row per optimizer step
//! <run>/samples/           PNG grids written during training
//! <run>/checkpoints/       epoch checkpoints and final.ckpt
//! <run>/reports/           evaluation tables
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::Result;
use crate::training::LossReport;

pub const METRICS_HEADER: &str = "step,epoch,lr,l_recon,l_adv,gamma,gamma_mean,k,l_total,l_kl,l_disc,d_real,d_fake";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory tree and archives `cfg`.
    pub fn create(root: &Path, cfg: &RunConfig) -> Result<Self> {
        for sub in ["samples", "checkpoints", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        cfg.save(root)?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Self {
        RunDir { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn sample_path(&self, epoch: usize) -> PathBuf {
        self.root.join("samples").join(format!("epoch-{epoch:04}.png"))
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch-{epoch:04}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("final.ckpt")
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    /// Appends loss rows to `metrics.csv`, writing the header first if the
    /// file is new.
    pub fn append_metrics(&self, rows: &[LossReport]) -> Result<()> {
        let path = self.metrics_path();
        let fresh = !path.exists();
        let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?);
        if fresh {
            writeln!(w, "{METRICS_HEADER}")?;
        }
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step, r.epoch, r.lr, r.l_recon, r.l_adv, r.gamma, r.gamma_mean, r.k, r.l_total, r.l_kl, r.l_disc, r.d_real, r.d_fake
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes an evaluation table under `reports/`.
    pub fn write_report(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.report_path(name);
        let mut f = File::create(&path)?;
        f.write_all(contents.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    #[test]
    fn layout_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str("variant = \"ae\"\n[data]\ntrain = \"mnist-sample-train\"\n", &[]).unwrap();
        let run = RunDir::create(dir.path(), &cfg).unwrap();
        assert!(run.config_path().is_file());
        let saved = crate::config::parse_config(&run.config_path(), &[]).unwrap();
        assert_eq!(saved, cfg);
        let row = LossReport {
            step: 0,
            epoch: 0,
            l_recon: 0.5,
            l_adv: 0.1,
            gamma: 1.0,
            gamma_mean: 1.0,
            k: 1.0,
            l_total: 0.6,
            l_kl: 0.0,
            l_disc: 0.2,
            d_real: 0.9,
            d_fake: 0.1,
            lr: 0.001,
        };
        run.append_metrics(&[row]).unwrap();
        run.append_metrics(&[row]).unwrap();
        let text = std::fs::read_to_string(run.metrics_path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1].split(',').count(), METRICS_HEADER.split(',').count());
    }
}
