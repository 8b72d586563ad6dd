//! Command implementations behind the `massseg` binary. Each command is an
//! ordinary function over filesystem paths so the test suites can drive
//! them in-process.

use crate::config::load_config;
use crate::eval::{evaluate_dataset, EvalReport};
use crate::manifest::{DatasetManifest, Split};
use crate::model_io::{load_model, save_model};
use crate::pgm::{mask_to_raw, read_pgm, write_pgm};
use crate::pipeline::{load_records, roi_from_raw, train_model};
use crate::preprocess::RoiAnnotation;
use crate::synth::generate_dataset;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Outcome of `train`.
#[derive(Debug)]
pub struct TrainSummary {
    pub sample_count: usize,
    pub iterations: usize,
    pub train_mean_dice: f64,
    pub weights: Vec<f64>,
}

/// Trains the full pipeline on the manifest's train split and writes the
/// model file. Prints the training-set mean Dice.
pub fn cmd_train(
    manifest_path: &Path,
    config_path: Option<&Path>,
    out_model: &Path,
) -> Result<TrainSummary> {
    let cfg = load_config(config_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let train = manifest.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: manifest has no train records",
            manifest_path.display()
        )));
    }
    let samples = load_records(&train, &cfg)?;
    let (model, result) = train_model(&samples, &cfg)?;
    save_model(out_model, &model)?;

    let report = evaluate_dataset(&model, &samples)?;
    println!(
        "trained on {} samples in {} cutting-plane iterations ({} constraints)",
        samples.len(),
        result.iterations,
        result.constraint_count
    );
    println!("weights: {:?}", model.weights.flat());
    println!("train mean dice {:.4}", report.mean_dice);
    println!("model written to {}", out_model.display());
    Ok(TrainSummary {
        sample_count: samples.len(),
        iterations: result.iterations,
        train_mean_dice: report.mean_dice,
        weights: model.weights.flat(),
    })
}

/// Segments one annotated image and writes the ROI-resolution mask (0/255
/// graymap). Prints the wall-clock segmentation seconds.
pub fn cmd_segment(
    model_path: &Path,
    image_path: &Path,
    center: (usize, usize),
    scale: f64,
    out_mask: &Path,
) -> Result<f64> {
    let model = load_model(model_path)?;
    let img = read_pgm(image_path)?;
    let ann = RoiAnnotation::new(center.0, center.1, scale)?;
    ann.validate_for(&img)?;
    let roi = roi_from_raw(&img, &ann, &model.config)?;
    let (mask, seconds) = model.segment(&roi)?;
    write_pgm(out_mask, &mask_to_raw(&mask))?;
    println!("segmentation seconds {seconds:.4}");
    println!("mask written to {}", out_mask.display());
    Ok(seconds)
}

/// Path of the structured (JSON) report written next to the text report.
pub fn structured_report_path(text_path: &Path) -> PathBuf {
    let mut name = text_path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

/// Evaluates the manifest's test split and writes the text and structured
/// reports. With `redact_timing`, all timing fields are zeroed so the
/// output is byte-reproducible.
pub fn cmd_evaluate(
    model_path: &Path,
    manifest_path: &Path,
    out_report: &Path,
    redact_timing: bool,
) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let test = manifest.split(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: manifest has no test records",
            manifest_path.display()
        )));
    }
    let samples = load_records(&test, &model.config)?;
    let mut report = evaluate_dataset(&model, &samples)?;
    if redact_timing {
        report = report.redact_timing();
    }
    std::fs::write(out_report, report.to_text()).map_err(|e| Error::io(out_report, e))?;
    let json_path = structured_report_path(out_report);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    println!("mean dice {:.4} over {} images", report.mean_dice, report.per_image.len());
    println!(
        "report written to {} and {}",
        out_report.display(),
        json_path.display()
    );
    Ok(report)
}

/// Generates a synthetic dataset and its manifest.
pub fn cmd_synth(count: usize, train_count: usize, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let manifest = generate_dataset(out_dir, count, train_count, seed)?;
    println!(
        "generated {count} samples ({train_count} train) under {}",
        out_dir.display()
    );
    println!("manifest written to {}", manifest.display());
    Ok(manifest)
}
