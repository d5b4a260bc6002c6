use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn augint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augint"))
        .args(args)
        .env("AUGINT_DATA_DIR", data_dir())
        .env_remove("AUGINT_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn failure_line(o: &Output) -> String {
    assert!(!o.status.success(), "expected failure, got {}", String::from_utf8_lossy(&o.stdout));
    let err = String::from_utf8_lossy(&o.stderr);
    err.lines().last().unwrap_or_default().to_string()
}

const TINY: &str = r#"
variant = "augintae"
checkpoint_every = 1
[data]
train = "mnist-sample-train"
limit = 64
[model]
width = 4
[train]
epochs = 2
batch_size = 8
steps_per_epoch = 2
"#;

fn write_config(dir: &Path, run: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("output_dir = {:?}\n{TINY}", run.display().to_string())).unwrap();
    path
}

/// A trained tiny run shared by the tests.
fn trained() -> &'static Path {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let run = dir.join("run");
        let cfg = write_config(&dir, &run);
        let out = augint(&["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(stdout(&out).trim(), run.join("checkpoints/final.ckpt").display().to_string());
        run
    })
}

fn final_ckpt() -> String {
    trained().join("checkpoints/final.ckpt").display().to_string()
}

fn seed_folder(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let batch = augint::datasets::letters::generate_letters(1, 9, &Default::default());
    for i in 0..n {
        augint::grid::save_png(&batch.image(i), &dir.path().join(format!("s{i}.png"))).unwrap();
    }
    dir
}

#[test]
fn train_writes_a_self_contained_run_directory() {
    let run = trained();
    let cfg = augint::config::parse_config(&run.join("config.toml"), &[]).unwrap();
    assert_eq!((cfg.train.epochs, cfg.model.width, cfg.data.limit), (2, 4, Some(64)));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    for f in ["samples/epoch-0001.png", "samples/epoch-0002.png", "checkpoints/epoch-0001.ckpt", "checkpoints/epoch-0002.ckpt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let (_, info) = augint::checkpoint::load_checkpoint(&run.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!((info.provenance.epoch, info.provenance.step), (2, 4));
}

#[test]
fn eval_metrics_print_tables() {
    let ckpt = final_ckpt();
    let recon = stdout(&augint(&["eval", "recon", "--checkpoint", &ckpt, "--set", "data.limit=40"]));
    let lines: Vec<&str> = recon.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("recon/augintae/mnist-sample-test,"));
    assert!(lines[2].starts_with("recon/augintae/synth-letters-test,"));

    let noise = stdout(&augint(&["eval", "noise", "--checkpoint", &ckpt, "--set", "data.limit=20", "--set", "eval.noise.trials=4"]));
    assert_eq!(noise.lines().count(), 1 + 6 + 1, "{noise}");

    let small = [
        "--set", "data.limit=60",
        "--set", "eval.domain.per_domain=30",
        "--set", "eval.domain.classifier.epochs=1",
        "--set", "eval.domain.classifier.width=4",
        "--set", "eval.fid.n_generated=24",
    ];
    let out_file = tempfile::tempdir().unwrap();
    let fid_path = out_file.path().join("fid.csv");
    let mut args = vec!["eval", "fid", "--checkpoint", &ckpt, "--out", fid_path.to_str().unwrap()];
    args.extend(small);
    let fid = stdout(&augint(&args));
    assert_eq!(std::fs::read_to_string(&fid_path).unwrap(), fid);
    assert!(fid.lines().nth(1).unwrap().contains("proxy-domain-classifier"), "{fid}");

    let mut args = vec!["eval", "domain", "--checkpoint", &ckpt];
    args.extend(small);
    let domain = stdout(&augint(&args));
    let value: f64 = domain.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=100.0).contains(&value));
}

#[test]
fn hallucinate_reports_each_regime() {
    let ckpt = final_ckpt();
    let out = stdout(&augint(&[
        "eval", "hallucinate", "--checkpoint", &ckpt,
        "--set", "data.limit=148",
        "--set", "eval.hallucination.runs=2",
        "--set", "eval.hallucination.epochs=1",
        "--set", "eval.hallucination.width=4",
    ]));
    let regimes: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(regimes, ["none", "mixup", "augintae"]);
    assert!(out.lines().nth(1).unwrap().starts_with("none,2,2,"), "control trains twice as long: {out}");
}

#[test]
fn generate_invert_and_export() {
    let ckpt = final_ckpt();
    let seeds = seed_folder(4);
    let out = tempfile::tempdir().unwrap();
    let gen = out.path().join("gen");
    stdout(&augint(&["generate", "--checkpoint", &ckpt, "--seeds", seeds.path().to_str().unwrap(), "--out", gen.to_str().unwrap(), "--count", "5"]));
    assert!(gen.join("00004.png").is_file() && !gen.join("00005.png").exists() && gen.join("grid.png").is_file());
    let mid = out.path().join("mid");
    stdout(&augint(&[
        "generate", "--checkpoint", &ckpt, "--seeds", seeds.path().to_str().unwrap(), "--out", mid.to_str().unwrap(), "--mode", "midpoints",
    ]));
    assert!(mid.join("00005.png").is_file() && !mid.join("00006.png").exists());

    let inv = out.path().join("inv");
    stdout(&augint(&[
        "invert", "--checkpoint", &ckpt, "--images", seeds.path().to_str().unwrap(), "--out", inv.to_str().unwrap(),
        "--set", "eval.inverter.iterations=4", "--set", "eval.inverter.batch_size=4", "--set", "eval.refine.iterations=3",
    ]));
    let errors = std::fs::read_to_string(inv.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 5);
    assert!(inv.join("target-inverter-refined.png").is_file());

    let exp = out.path().join("export");
    stdout(&augint(&["export", "--checkpoint", &ckpt, "--out", exp.to_str().unwrap()]));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(exp.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["latent_dim"], 32);
    assert!(exp.join("weights.bin").is_file());
}

#[test]
fn failures_exit_nonzero_with_one_line_reason() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &dir.path().join("r"));
    let cfg = cfg.to_str().unwrap();

    let line = failure_line(&augint(&["train", "--config", cfg, "--set", "train.epoch=3"]));
    assert!(line.starts_with("error: ") && line.contains("epoch"), "{line}");
    let line = failure_line(&augint(&["train", "--config", cfg, "--set", "train.epochs=0"]));
    assert!(line.starts_with("error: "), "{line}");
    let line = failure_line(&augint(&["eval", "recon", "--checkpoint", "/nonexistent.ckpt"]));
    assert!(line.starts_with("error: ") && line.contains("/nonexistent.ckpt"), "{line}");
    let line = failure_line(&augint(&["serve"]));
    assert!(line.contains("--models"), "{line}");
}

#[test]
fn divergence_leaves_last_good_checkpoint_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    let cfg = write_config(dir.path(), &run);
    let out = augint(&["train", "--config", cfg.to_str().unwrap(), "--set", "train.lr=1e30", "--set", "train.epochs=5"]);
    let line = failure_line(&out);
    assert!(line.contains("diverged"), "{line}");
    augint::checkpoint::load_checkpoint(&run.join("checkpoints/last-good.ckpt")).unwrap();
    assert!(run.join("diagnostics/loss_trace.csv").is_file());
    assert!(run.join("diagnostics/last-good-samples.png").is_file());
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_answers_over_http() {
    let ckpt = final_ckpt();
    let port = free_port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_augint"))
        .args(["serve", "--checkpoint", &ckpt, "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    let response = loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(mut s) => {
                s.write_all(b"GET /models HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
                let mut buf = String::new();
                s.read_to_string(&mut buf).unwrap();
                break buf;
            }
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(100)),
            Err(e) => panic!("server never came up: {e}"),
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"latent_dim\":32"), "{response}");
}
