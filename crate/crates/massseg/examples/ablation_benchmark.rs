//! Trains the full model and every single-unary ablation on a seeded
//! synthetic benchmark and prints their test-set Dice, mirroring the
//! acceptance benchmark. Run with `cargo run --release --example
//! ablation_benchmark`.

use massseg::eval::evaluate_dataset;
use massseg::manifest::{DatasetManifest, Split};
use massseg::model::ModelConfig;
use massseg::pipeline::{fit_potentials, load_records, train_weights, FittedPotentials};
use massseg::preprocess::enhance_contrast;
use massseg::synth::generate_dataset;
use std::time::Instant;

fn subset(full: &FittedPotentials, cfg: &ModelConfig) -> FittedPotentials {
    FittedPotentials {
        prior: if cfg.use_prior { full.prior.clone() } else { None },
        gmm: if cfg.use_gmm { full.gmm.clone() } else { None },
        dbns: if cfg.use_dbn {
            cfg.patch_sizes
                .iter()
                .map(|s| {
                    full.dbns
                        .iter()
                        .find(|d| d.patch_size() == *s)
                        .expect("dbn for patch size")
                        .clone()
                })
                .collect()
        } else {
            vec![]
        },
    }
}

fn main() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = generate_dataset(dir.path(), 90, 60, 0).unwrap();
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let full_cfg = ModelConfig::default();
    let train = load_records(&manifest.split(Split::Train), &full_cfg).unwrap();
    let test = load_records(&manifest.split(Split::Test), &full_cfg).unwrap();
    println!("[{:7.1?}] data ready: {} train, {} test", t0.elapsed(), train.len(), test.len());

    let images: Vec<_> = train
        .iter()
        .map(|s| enhance_contrast(&s.image, full_cfg.gamma).unwrap())
        .collect();
    let masks: Vec<_> = train.iter().map(|s| s.mask.clone()).collect();
    let potentials = fit_potentials(&images, &masks, &full_cfg).unwrap();
    println!("[{:7.1?}] potentials fitted", t0.elapsed());

    let mut configs = vec![("full", full_cfg.clone())];
    for name in ["prior", "gmm", "dbn3", "dbn5"] {
        let mut cfg = full_cfg.clone();
        cfg.use_prior = name == "prior";
        cfg.use_gmm = name == "gmm";
        cfg.use_dbn = name.starts_with("dbn");
        cfg.patch_sizes = match name {
            "dbn3" => vec![3],
            "dbn5" => vec![5],
            _ => vec![],
        };
        configs.push((name, cfg));
    }

    for (name, cfg) in &configs {
        let t1 = Instant::now();
        let pots = subset(&potentials, cfg);
        let (model, result) = train_weights(&pots, &images, &masks, cfg).unwrap();
        let train_report = evaluate_dataset(&model, &train).unwrap();
        let test_report = evaluate_dataset(&model, &test).unwrap();
        println!(
            "[{:7.1?}] {name:6}: {} iters, train dice {:.4}, test dice {:.4}, mean seg {:.3}s, w {:?} ({:?})",
            t0.elapsed(),
            result.iterations,
            train_report.mean_dice,
            test_report.mean_dice,
            test_report.mean_seconds,
            model.weights.flat(),
            t1.elapsed(),
        );
    }
}
