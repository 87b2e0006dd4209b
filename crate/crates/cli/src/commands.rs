//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use gal_core::adversarial::{robustness_sweep, fgsm_perturb_with, AttackKind};
use gal_core::analysis::{
    build_hopfield, energy_scatter, export_features, fisher_separation, spectrum_fit,
};
use gal_core::checkpoint::{load_checkpoint, save_checkpoint};
use gal_core::dataset::{builtin_manifest, fetch_dataset, load_cifar10_gray, load_mnist_idx, parse_manifest, Dataset};
use gal_core::linalg::Rng;
use gal_core::network::features_at;
use gal_core::trainer::{
    evaluate, evaluate_inputs, retrain_layer, train_end_to_end_baseline, train_eval_readouts,
    train_layerwise, TrainMethod,
};
use gal_core::{Error, Result};

use crate::config::{DataSource, RunConfig};
use crate::manifest::RunManifest;

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn write_report(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp-report");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Loads train and test splits per the [data] section, fetching when enabled.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let dir = &cfg.data.dir;
    let (mut train, mut test) = match cfg.data.source {
        DataSource::Mnist => {
            let paths = [
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            ];
            if paths.iter().any(|p| !p.exists()) {
                if cfg.data.fetch {
                    fetch_dataset(&builtin_manifest(), dir)?;
                } else {
                    return Err(Error::Data(format!(
                        "MNIST IDX files not found under {}; run `gal fetch-data --out {0}` or set [data] fetch = true",
                        dir.display()
                    )));
                }
            }
            (
                load_mnist_idx(&paths[0], &paths[1])?,
                load_mnist_idx(&paths[2], &paths[3])?,
            )
        }
        DataSource::Cifar10 => {
            let train_paths: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let test_paths = vec![dir.join("test_batch.bin")];
            (
                load_cifar10_gray(&train_paths)?,
                load_cifar10_gray(&test_paths)?,
            )
        }
    };
    if cfg.data.train_limit > 0 {
        train = train.take(cfg.data.train_limit);
    }
    if cfg.data.test_limit > 0 {
        test = test.take(cfg.data.test_limit);
    }
    Ok((train, test))
}

pub fn cmd_fetch_data(out: &Path, manifest_path: Option<&Path>) -> Result<()> {
    let entries = match manifest_path {
        Some(p) => parse_manifest(&fs::read_to_string(p)?)?,
        None => builtin_manifest(),
    };
    let paths = fetch_dataset(&entries, out)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start("train", cfg.train.seed, config_json(cfg));
    let (train_ds, _) = load_data(cfg)?;

    let ckpt = match cfg.method {
        TrainMethod::Layerwise => {
            let mut ckpt = train_layerwise(&train_ds, &cfg.train)?;
            train_eval_readouts(&mut ckpt, &train_ds, cfg.train.eval_epochs)?;
            ckpt
        }
        TrainMethod::EndToEnd => train_end_to_end_baseline(&train_ds, &cfg.train)?,
    };

    let ckpt_path = cfg.out_dir.join("checkpoint.ckpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    manifest.add_artifact(&ckpt_path);

    let log_path = cfg.out_dir.join("training_log.jsonl");
    write_report(&log_path, &jsonl(&ckpt.log))?;
    manifest.add_artifact(&log_path);

    manifest.finish(&cfg.out_dir)?;
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

#[derive(Serialize)]
struct LayerAccuracy {
    layer: usize,
    accuracy: f64,
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, layer: Option<usize>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, test_ds) = load_data(cfg)?;
    let layers: Vec<usize> = match layer {
        Some(l) => vec![l],
        None => (0..ckpt.num_layers())
            .filter(|&l| ckpt.eval_readouts[l].is_some())
            .collect(),
    };
    for l in layers {
        let accuracy = evaluate(&ckpt, &test_ds, l)?;
        println!(
            "{}",
            serde_json::to_string(&LayerAccuracy { layer: l, accuracy }).expect("serializes")
        );
    }
    Ok(())
}

pub fn cmd_attack(
    cfg: &RunConfig,
    checkpoint: &Path,
    kinds: &[AttackKind],
    eps: &[f64],
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start("attack", seed, config_json(cfg));
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, test_ds) = load_data(cfg)?;

    for &kind in kinds {
        let report = robustness_sweep(&ckpt, &test_ds, kind, eps, seed, cfg.attack.clip)?;
        let path = cfg.out_dir.join(format!("attack_{kind}.jsonl"));
        write_report(&path, &report.to_jsonl())?;
        manifest.add_artifact(&path);
        println!("{kind}: {}", path.display());
    }
    manifest.finish(&cfg.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SpectrumRecord {
    layer: usize,
    breakpoint: usize,
    head_gamma: f64,
    tail_gamma: f64,
    head_residual: f64,
    tail_residual: f64,
    usable_eigenvalues: usize,
}

#[derive(Serialize)]
struct FisherRecord {
    layer: usize,
    class_a: u8,
    class_b: u8,
    fisher_separation: f64,
}

pub fn cmd_analyze(
    cfg: &RunConfig,
    checkpoint: &Path,
    mode: &str,
    layer_override: Option<usize>,
) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let mut manifest = RunManifest::start("analyze", cfg.train.seed, config_json(cfg));
    let layer = layer_override.unwrap_or(cfg.analysis.layer);

    match mode {
        "energy" => {
            let (train_ds, test_ds) = load_data(cfg)?;
            let mut rng = Rng::derive(cfg.train.seed, 0x6000 + layer as u64);
            let model = build_hopfield(&ckpt, &train_ds, layer, cfg.analysis.n_mu, &mut rng)?;
            let records =
                energy_scatter(&ckpt, &test_ds, layer, &cfg.analysis.classes, &model)?;
            let path = cfg.out_dir.join(format!("energy_layer{layer}.jsonl"));
            write_report(&path, &jsonl(&records))?;
            manifest.add_artifact(&path);
            println!("energy records: {}", path.display());

            // Pairwise Fisher separation between the selected classes.
            for (i, &a) in cfg.analysis.classes.iter().enumerate() {
                for &b in &cfg.analysis.classes[i + 1..] {
                    let ea: Vec<f64> = records
                        .iter()
                        .filter(|r| r.class == a)
                        .map(|r| r.energy)
                        .collect();
                    let eb: Vec<f64> = records
                        .iter()
                        .filter(|r| r.class == b)
                        .map(|r| r.energy)
                        .collect();
                    if !ea.is_empty() && !eb.is_empty() {
                        let record = FisherRecord {
                            layer,
                            class_a: a,
                            class_b: b,
                            fisher_separation: fisher_separation(&ea, &eb),
                        };
                        println!("{}", serde_json::to_string(&record).expect("serializes"));
                    }
                }
            }
        }
        "spectrum" => {
            let (_, test_ds) = load_data(cfg)?;
            let layers: Vec<usize> = match layer_override {
                Some(l) => vec![l],
                None => (0..ckpt.num_layers()).collect(),
            };
            let mut records = Vec::new();
            for l in layers {
                let features = features_at(&ckpt.blocks, &test_ds.images, l)?;
                let fit = spectrum_fit(&features)?;
                records.push(SpectrumRecord {
                    layer: l,
                    breakpoint: fit.breakpoint,
                    head_gamma: fit.head_gamma,
                    tail_gamma: fit.tail_gamma,
                    head_residual: fit.head_residual,
                    tail_residual: fit.tail_residual,
                    usable_eigenvalues: fit.eigenvalues.len(),
                });
            }
            let path = cfg.out_dir.join("spectrum.jsonl");
            write_report(&path, &jsonl(&records))?;
            manifest.add_artifact(&path);
            for r in &records {
                println!("{}", serde_json::to_string(r).expect("serializes"));
            }
        }
        "export" => {
            let (_, test_ds) = load_data(cfg)?;
            let path = cfg.out_dir.join(format!("features_layer{layer}.bin"));
            export_features(&ckpt, &test_ds, layer, &path)?;
            manifest.add_artifact(&path);
            println!("features: {}", path.display());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown analyze mode '{other}' (energy|spectrum|export)"
            )))
        }
    }
    manifest.finish(&cfg.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepCell {
    alpha: f64,
    beta: f64,
    layer: usize,
    seed: u64,
    clean_accuracy: f64,
    fgsm_accuracy: f64,
    fgsm_eps: f64,
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start("sweep", cfg.train.seed, config_json(cfg));
    let (train_ds, test_ds) = load_data(cfg)?;
    let layer = cfg.sweep.layer;

    // One base model supplies the frozen layers below the swept one.
    let base = train_layerwise(&train_ds, &cfg.train)?;

    let cells: Vec<(usize, f64, f64)> = cfg
        .sweep
        .alpha_grid
        .iter()
        .flat_map(|&a| cfg.sweep.beta_grid.iter().map(move |&b| (a, b)))
        .enumerate()
        .map(|(i, (a, b))| (i, a, b))
        .collect();

    let results: Vec<Result<SweepCell>> = cells
        .par_iter()
        .map(|&(index, alpha, beta)| {
            let cell_seed = cfg.train.seed ^ index as u64;
            let ckpt = retrain_layer(&base, &train_ds, layer, alpha, beta, cell_seed)?;
            let clean_accuracy = evaluate(&ckpt, &test_ds, layer)?;
            let adv = fgsm_perturb_with(
                &ckpt,
                layer,
                &test_ds.images,
                &test_ds.labels,
                cfg.sweep.fgsm_eps,
                cfg.attack.clip,
            )?;
            let fgsm_accuracy = evaluate_inputs(&ckpt, &adv, &test_ds.labels, layer)?;
            Ok(SweepCell {
                alpha,
                beta,
                layer,
                seed: cell_seed,
                clean_accuracy,
                fgsm_accuracy,
                fgsm_eps: cfg.sweep.fgsm_eps,
            })
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }

    let path = cfg.out_dir.join("sweep.jsonl");
    write_report(&path, &jsonl(&records))?;
    manifest.add_artifact(&path);
    manifest.finish(&cfg.out_dir)?;

    println!("alpha    beta     clean    fgsm@{:.3}", cfg.sweep.fgsm_eps);
    for r in &records {
        println!(
            "{:<8.3} {:<8.3} {:<8.4} {:<8.4}",
            r.alpha, r.beta, r.clean_accuracy, r.fgsm_accuracy
        );
    }
    Ok(())
}
