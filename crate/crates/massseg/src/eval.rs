//! Segmentation quality and the exhaustive inference oracle.

use crate::lattice::{energy, LabelMask, ModelWeights, PotentialStack, BACKGROUND, MASS};
use crate::model::{RoiSample, TrainedModel};
use crate::ssvm::hamming;
use crate::{Error, Result};
use serde::Serialize;

/// Largest lattice the exhaustive oracle will enumerate.
pub const BRUTE_FORCE_PIXEL_LIMIT: usize = 20;

/// Dice overlap `2TP / (FP + FN + 2TP)` over the +1 pixels. Defined as 1
/// when both masks are entirely background.
pub fn dice(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::LatticeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (p, g) in pred.labels().iter().zip(gt.labels()) {
        match (*p == MASS, *g == MASS) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fne == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (fp + fne + 2 * tp) as f64)
}

/// Exhaustive minimizer of `E(y)` (or `E(y) - Delta(reference, y)` when a
/// loss reference is given) over all labelings of a small lattice. Ties are
/// broken by the lexicographically smallest label vector (-1 < +1, pixel 0
/// first). This is the independent oracle the min-cut path is checked
/// against.
pub fn brute_force_infer(
    stack: &PotentialStack,
    w: &ModelWeights,
    loss_reference: Option<&LabelMask>,
) -> Result<LabelMask> {
    let pixels = stack.pixel_count();
    if pixels > BRUTE_FORCE_PIXEL_LIMIT {
        return Err(Error::LatticeTooLarge(pixels, BRUTE_FORCE_PIXEL_LIMIT));
    }
    let mut best: Option<(f64, LabelMask)> = None;
    for state in 0..1u64 << pixels {
        let labels: Vec<i8> = (0..pixels)
            .map(|i| if state >> i & 1 == 1 { MASS } else { BACKGROUND })
            .collect();
        let y = LabelMask::new(stack.width(), stack.height(), labels)?;
        let mut objective = energy(&y, stack, w)?;
        if let Some(reference) = loss_reference {
            objective -= hamming(reference, &y)? as f64;
        }
        let better = match &best {
            None => true,
            Some((obj, mask)) => {
                objective < *obj || (objective == *obj && y.labels() < mask.labels())
            }
        };
        if better {
            best = Some((objective, y));
        }
    }
    Ok(best.expect("at least one labeling").1)
}

/// Per-image evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct ImageEval {
    pub name: String,
    pub dice: f64,
    pub seconds: f64,
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub per_image: Vec<ImageEval>,
    pub mean_dice: f64,
    pub mean_seconds: f64,
}

impl EvalReport {
    /// Line-oriented text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# massseg evaluation report\n");
        out.push_str(&format!("# config {}\n", self.config_fingerprint));
        for img in &self.per_image {
            out.push_str(&format!(
                "image\t{}\tdice\t{:.6}\tseconds\t{:.6}\n",
                img.name, img.dice, img.seconds
            ));
        }
        out.push_str(&format!("images\t{}\n", self.per_image.len()));
        out.push_str(&format!("mean_dice\t{:.6}\n", self.mean_dice));
        out.push_str(&format!("mean_seconds\t{:.6}\n", self.mean_seconds));
        out
    }

    /// Copy with all timing fields zeroed, for byte-reproducible output.
    pub fn redact_timing(&self) -> EvalReport {
        EvalReport {
            config_fingerprint: self.config_fingerprint.clone(),
            per_image: self
                .per_image
                .iter()
                .map(|img| ImageEval {
                    name: img.name.clone(),
                    dice: img.dice,
                    seconds: 0.0,
                })
                .collect(),
            mean_dice: self.mean_dice,
            mean_seconds: 0.0,
        }
    }
}

/// Segments every sample through the full pipeline (contrast enhancement,
/// potential evaluation, min-cut inference) and reports per-image Dice and
/// wall-clock seconds.
pub fn evaluate_dataset(model: &TrainedModel, samples: &[RoiSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluate_dataset needs samples".into()));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    for sample in samples {
        let (pred, seconds) = model.segment(&sample.image)?;
        per_image.push(ImageEval {
            name: sample.name.clone(),
            dice: dice(&pred, &sample.mask)?,
            seconds,
        });
    }
    let mean_dice = per_image.iter().map(|i| i.dice).sum::<f64>() / per_image.len() as f64;
    let mean_seconds =
        per_image.iter().map(|i| i.seconds).sum::<f64>() / per_image.len() as f64;
    Ok(EvalReport {
        config_fingerprint: model.config.fingerprint(),
        per_image,
        mean_dice,
        mean_seconds,
    })
}
