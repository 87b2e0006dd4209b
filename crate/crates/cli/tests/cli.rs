//! End-to-end runs of the `gal` binary on a small synthetic IDX dataset:
//! train -> evaluate -> attack -> analyze -> sweep, plus error paths and
//! determinism of produced artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gal() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gal"))
}

fn run(args: &[&str]) -> Output {
    gal().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Minimal IDX writer (big-endian headers, u8 payloads).
fn write_idx(dir: &Path, stem: &str, images: &[Vec<u8>], labels: &[u8]) {
    let side = (images[0].len() as f64).sqrt() as u32;
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&side.to_be_bytes());
    img.extend_from_slice(&side.to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), img).unwrap();
    fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), lab).unwrap();
}

/// Tiny 10-class image set (the IDX loader is an MNIST loader, so all ten
/// classes must be present): a class-dependent bright row band plus
/// deterministic noise, 16x16 pixels.
fn synth_dataset(dir: &Path, train_n: usize, test_n: usize) {
    let make = |n: usize, salt: u64| -> (Vec<Vec<u8>>, Vec<u8>) {
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut state = 0x9E3779B97F4A7C15u64 ^ salt;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for i in 0..n {
            let class = (i % 10) as u8;
            let mut img = vec![0u8; 256];
            for (p, v) in img.iter_mut().enumerate() {
                let row = p / 16;
                let band = row >= (class as usize) && row < (class as usize + 6);
                let base = if band { 140 + 10 * (class % 4) } else { 20 };
                *v = base + (next() % 40) as u8;
            }
            images.push(img);
            labels.push(class);
        }
        (images, labels)
    };
    let (ti, tl) = make(train_n, 1);
    write_idx(dir, "train", &ti, &tl);
    let (vi, vl) = make(test_n, 2);
    write_idx(dir, "t10k", &vi, &vl);
}

fn write_config(path: &Path, data_dir: &Path, out_dir: &Path, seed: u64) {
    let text = format!(
        "[data]\n\
         source = mnist\n\
         dir = {}\n\
         \n\
         [model]\n\
         dims = 256,16,16\n\
         classes = 10\n\
         \n\
         [train]\n\
         alpha = 1.5,1.8\n\
         beta = 0.7,0.7\n\
         epochs_per_block = 2\n\
         batch_size = 16\n\
         eval_epochs = 3\n\
         seed = {seed}\n\
         \n\
         [attack]\n\
         eps = 0.0,0.1\n\
         \n\
         [analysis]\n\
         layer = 1\n\
         classes = 0,2\n\
         n_mu = 4\n\
         \n\
         [sweep]\n\
         layer = 1\n\
         alpha_grid = 1.2,1.8\n\
         beta_grid = 0.5\n\
         fgsm_eps = 0.1\n\
         \n\
         [output]\n\
         dir = {}\n",
        data_dir.display(),
        out_dir.display()
    );
    fs::write(path, text).unwrap();
}

struct Workspace {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn workspace(seed: u64) -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    synth_dataset(&data, 120, 40);
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.cfg");
    write_config(&config, &data, &out, seed);
    Workspace {
        _tmp: tmp,
        config,
        out,
    }
}

fn trained_workspace(seed: u64) -> Workspace {
    let ws = workspace(seed);
    let out = run(&["train", "--config", ws.config.to_str().unwrap()]);
    assert_success(&out);
    assert!(ws.out.join("checkpoint.ckpt").exists());
    ws
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let ws = trained_workspace(7);
    let log = fs::read_to_string(ws.out.join("training_log.jsonl")).unwrap();
    // 2 layers x 2 epochs.
    assert_eq!(log.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 2);
}

#[test]
fn training_is_deterministic_across_runs() {
    let a = trained_workspace(13);
    let b = trained_workspace(13);
    let bytes_a = fs::read(a.out.join("checkpoint.ckpt")).unwrap();
    let bytes_b = fs::read(b.out.join("checkpoint.ckpt")).unwrap();
    assert_eq!(bytes_a, bytes_b, "same config + seed must give identical checkpoints");
}

#[test]
fn evaluate_prints_one_record_per_layer() {
    let ws = trained_workspace(5);
    let out = run(&[
        "evaluate",
        "--checkpoint",
        ws.out.join("checkpoint.ckpt").to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
    ]);
    assert_success(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let acc = v["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn attack_reports_align_with_grid_and_rerun_identically() {
    let ws = trained_workspace(3);
    let ckpt = ws.out.join("checkpoint.ckpt");
    for _ in 0..2 {
        let out = run(&[
            "attack",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--config",
            ws.config.to_str().unwrap(),
            "--kind",
            "all",
            "--seed",
            "11",
        ]);
        assert_success(&out);
    }
    for kind in ["fgsm", "gaussian"] {
        let report = fs::read_to_string(ws.out.join(format!("attack_{kind}.jsonl"))).unwrap();
        // 2 layers x 2 epsilons.
        assert_eq!(report.lines().count(), 4, "{kind}");
    }
    let first = fs::read_to_string(ws.out.join("attack_gaussian.jsonl")).unwrap();
    let out = run(&[
        "attack",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--kind",
        "gaussian",
        "--seed",
        "11",
    ]);
    assert_success(&out);
    let second = fs::read_to_string(ws.out.join("attack_gaussian.jsonl")).unwrap();
    assert_eq!(first, second, "fixed seed must reproduce the report");
}

#[test]
fn analyze_modes_produce_expected_artifacts() {
    let ws = trained_workspace(9);
    let ckpt = ws.out.join("checkpoint.ckpt");
    let base = [
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
    ];

    let out = run(&[&["analyze"], &base[..], &["--mode", "energy"]].concat());
    assert_success(&out);
    let energy = fs::read_to_string(ws.out.join("energy_layer1.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(energy.lines().next().unwrap()).unwrap();
    let class = rec["class"].as_u64().unwrap();
    assert!(class == 0 || class == 2, "energy honors the class selection");

    let out = run(&[&["analyze"], &base[..], &["--mode", "spectrum"]].concat());
    assert_success(&out);
    let spectrum = fs::read_to_string(ws.out.join("spectrum.jsonl")).unwrap();
    assert_eq!(spectrum.lines().count(), 2);
    for line in spectrum.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["head_gamma"].is_number() && v["tail_gamma"].is_number());
        assert!(v["breakpoint"].as_u64().unwrap() >= 5);
    }

    let out = run(&[&["analyze"], &base[..], &["--mode", "export", "--layer", "0"]].concat());
    assert_success(&out);
    let features = ws.out.join("features_layer0.bin");
    let bytes = fs::read(&features).unwrap();
    assert_eq!(&bytes[..8], b"GALFEAT1");
    // M = 40 test samples, N = 16 features at layer 0.
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 40);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 16);
}

#[test]
fn sweep_emits_full_grid() {
    let ws = workspace(21);
    let out = run(&["sweep", "--config", ws.config.to_str().unwrap()]);
    assert_success(&out);
    let grid = fs::read_to_string(ws.out.join("sweep.jsonl")).unwrap();
    // |alpha_grid| x |beta_grid| = 2 x 1.
    assert_eq!(grid.lines().count(), 2);
    for line in grid.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["clean_accuracy"].as_f64().unwrap() <= 1.0);
        assert!(v["fgsm_accuracy"].is_number());
        assert_eq!(v["layer"].as_u64().unwrap(), 1);
    }
}

#[test]
fn config_errors_exit_with_code_two_before_compute() {
    let ws = workspace(1);
    let bad = ws.config.with_extension("bad");
    let text = fs::read_to_string(&ws.config)
        .unwrap()
        .replace("alpha = 1.5,1.8", "alpha = 1.5");
    fs::write(&bad, text).unwrap();
    let out = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.out.join("checkpoint.ckpt").exists(), "no compute on config error");
}

#[test]
fn missing_data_exits_with_code_three() {
    let ws = workspace(1);
    let text = fs::read_to_string(&ws.config).unwrap();
    let moved = text.replace("/data", "/nonexistent");
    fs::write(&ws.config, moved).unwrap();
    let out = run(&["train", "--config", ws.config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "{stderr}");
}

#[test]
fn attacking_probeless_checkpoint_exits_with_code_four() {
    // An end-to-end baseline has a probe only at the top layer; asking for a
    // lower layer's evaluation must fail as a state error.
    let ws = workspace(2);
    let text = fs::read_to_string(&ws.config)
        .unwrap()
        .replace("seed = 2", "seed = 2\nmethod = end_to_end");
    fs::write(&ws.config, text).unwrap();
    let out = run(&["train", "--config", ws.config.to_str().unwrap()]);
    assert_success(&out);

    let out = run(&[
        "evaluate",
        "--checkpoint",
        ws.out.join("checkpoint.ckpt").to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--layer",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn corrupt_checkpoint_exits_with_code_three() {
    let ws = trained_workspace(17);
    let path = ws.out.join("checkpoint.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'Z';
    fs::write(&path, bytes).unwrap();
    let out = run(&[
        "evaluate",
        "--checkpoint",
        path.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
