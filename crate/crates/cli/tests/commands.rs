use std::path::Path;
use std::process::Command;

use oled_cli::commands::{self, Method};
use oled_cli::config::{DatasetConfig, EvalConfig, ReconstructConfig, SweepConfig, TrainRunConfig};
use oled_cli::dataset::Split;
use oled_cli::manifest::DatasetManifest;
use oled_cli::CliError;
use oled_core::detach::DetachParams;
use oled_core::oimg::Oimg;
use oled_net::{Checkpoint, NetworkConfig, TrainConfig};

fn small_dataset(jitter: f64) -> DatasetConfig {
    toml::from_str(&format!("seed = 11\ncount = 5\nrows = 16\ncols = 16\njitter_frac = {jitter}\n")).unwrap()
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        lr_schedule: oled_net::sgd::LrSchedule(vec![(0, 0.01), (4, 0.001)]),
        batch: 2,
        patch: 8,
        max_iters: 8,
        val_every: 4,
        ..Default::default()
    }
}

fn tiny_net() -> NetworkConfig {
    NetworkConfig { n_param_layers: 4, filters: 4, ..NetworkConfig::desk() }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gen_dataset_is_byte_identical_and_reloads() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_dataset(0.1);
    let m = commands::gen_dataset(&cfg, a.path()).unwrap();
    commands::gen_dataset(&cfg, b.path()).unwrap();
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));

    let back = DatasetManifest::load(a.path()).unwrap();
    assert_eq!(back, m);
    back.validate_files(a.path()).unwrap();
    assert_eq!(back.records(Split::Train).count(), 5 - back.records(Split::Test).count());

    // what the files hold is exactly the in-memory sample at f32
    let pairs = back.load_pairs(a.path(), Split::Train).unwrap();
    let first = back.records(Split::Train).next().unwrap().index;
    let mem = oled_cli::dataset::synth_sample(&cfg, first).unwrap().pair();
    assert_eq!(pairs[0].input, mem.input);
    assert_eq!(pairs[0].t2_ms, mem.t2_ms);
}

#[test]
fn zero_jitter_records_identical_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let m = commands::gen_dataset(&small_dataset(0.0), dir.path()).unwrap();
    assert!(m.samples.windows(2).all(|w| w[0].params == w[1].params));
    let jittered = commands::gen_dataset(&small_dataset(0.1), dir.path()).unwrap();
    assert!(jittered.samples.windows(2).any(|w| w[0].params != w[1].params));
}

#[test]
fn manifest_rejects_missing_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = commands::gen_dataset(&small_dataset(0.1), dir.path()).unwrap();
    let victim = dir.path().join(&m.samples[2].t2_path);

    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    assert!(m.validate_files(dir.path()).is_err());

    let mut flipped = bytes.clone();
    flipped[1] ^= 0xff;
    std::fs::write(&victim, &flipped).unwrap();
    assert!(m.validate_files(dir.path()).is_err());

    std::fs::remove_file(&victim).unwrap();
    assert!(matches!(m.validate_files(dir.path()), Err(CliError::Io { .. })));

    let mut dup = m.clone();
    dup.samples[1].index = dup.samples[0].index;
    assert!(dup.validate_records().is_err());
    let mut escape = m.clone();
    escape.samples[0].oled_path = "../outside.oimg".into();
    assert!(escape.validate_records().is_err());
}

#[test]
fn train_writes_log_and_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    commands::gen_dataset(&small_dataset(0.1), &data).unwrap();
    let cfg = TrainRunConfig { dataset: "data".into(), network: tiny_net(), train: tiny_train() };
    let cfg_path = root.path().join("train.toml");
    std::fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    let out = root.path().join("run");
    let res = commands::train_from_config(&cfg_path, &out).unwrap();

    let log = std::fs::read_to_string(out.join(commands::TRAIN_LOG)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "iteration,lr,train_loss,val_loss");
    assert_eq!(lines.count(), 9);
    let ckpt = Checkpoint::<f32>::load(out.join(commands::FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ckpt.iteration, 8);
    assert_eq!(ckpt.network, res.network);
    assert_eq!(ckpt.meta.train_config.unwrap().jitter_frac, 0.1);
    assert!(out.join(commands::checkpoint_name(4)).exists());
}

#[test]
fn reconstruct_both_methods_and_evaluate() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let m = commands::gen_dataset(&small_dataset(0.0), &data).unwrap();
    let input = data.join(&m.samples[0].oled_path);
    let reference = data.join(&m.samples[0].t2_path);

    let cfg = ReconstructConfig {
        detach: DetachParams { max_outer_iters: 1, ..Default::default() },
        runs: 1,
        ..Default::default()
    };
    let out = root.path().join("detach.oimg");
    let report = root.path().join("detach.json");
    let r = commands::reconstruct_files(&input, Method::Detach, None, &cfg, &out, &report).unwrap();
    assert_eq!(r.converged, Some(false));
    assert_eq!(r.iterations, Some(1));
    assert_eq!(r.timing.runs_ms.len(), 1);
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(written["method"], "detach");
    assert_eq!(Oimg::load(&out).unwrap().meta.channel_names, vec!["t2_ms".to_string()]);

    let eval_dir = root.path().join("eval");
    let eval = EvalConfig { brain_rois: false, roi: vec![] };
    let rep = commands::evaluate_files(&out, &reference, &eval, &eval_dir).unwrap();
    assert!(rep.error.n_pixels > 0);
    assert!(eval_dir.join("report.json").exists() && eval_dir.join("rois.csv").exists());

    // network path: a checkpoint from a tiny run
    let train_cfg = TrainRunConfig { dataset: data.clone(), network: tiny_net(), train: tiny_train() };
    commands::train_run(&train_cfg, &root.path().join("run")).unwrap();
    let ckpt = root.path().join("run").join(commands::FINAL_CHECKPOINT);
    let net_cfg = ReconstructConfig { runs: 2, network: Some(tiny_net()), ..Default::default() };
    let out = root.path().join("net.oimg");
    let r = commands::reconstruct_files(&input, Method::Network, Some(&ckpt), &net_cfg, &out, &report).unwrap();
    assert_eq!((r.rows, r.cols), (16, 16));
    assert_eq!(r.timing.runs_ms.len(), 2);

    assert!(commands::reconstruct_files(&input, Method::Network, None, &net_cfg, &out, &report).is_err());
    let wrong = ReconstructConfig { network: Some(NetworkConfig { filters: 8, ..tiny_net() }), ..net_cfg };
    let err = commands::reconstruct_files(&input, Method::Network, Some(&ckpt), &wrong, &out, &report).unwrap_err();
    assert!(matches!(err, CliError::Net(_)), "{err}");
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let cfg = SweepConfig {
        kind: oled_cli::config::SweepKind::Depth,
        dataset: small_dataset(0.1),
        network: tiny_net(),
        train: tiny_train(),
        depths: vec![4, 5],
        deviations: vec![0.0],
        eval_size: 32,
        eval_snr_db: f64::INFINITY,
        guided_filter: false,
    };
    let rows = commands::sweep(&cfg).unwrap();
    let ok: Vec<_> = rows.iter().filter(|r| r.depth == 4).collect();
    assert_eq!(ok.len(), 15);
    assert!(ok.iter().all(|r| r.status == "ok" && r.roi_id.is_some()));
    let bad: Vec<_> = rows.iter().filter(|r| r.depth == 5).collect();
    assert_eq!(bad.len(), 1);
    assert!(bad[0].status.starts_with("error"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    commands::write_sweep_csv(&rows, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 17);
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\ncount = 0\nrows = 16\ncols = 16\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oled"))
        .args(["gen-dataset", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("count"));

    let ok = Command::new(env!("CARGO_BIN_EXE_oled"))
        .args(["gen-dataset", "--config", "/nonexistent/x.toml", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let line: serde_json::Value = serde_json::from_slice(&ok.stderr).unwrap();
    assert_eq!(line["error"], "io");
}
