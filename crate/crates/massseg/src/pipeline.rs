//! End-to-end orchestration: manifest records to canonical ROI samples,
//! sub-model fitting, weight learning, and raw-image segmentation.

use crate::dbn::{extract_patch, train_dbn, DbnLayout, DbnModel, RbmTrainConfig};
use crate::lattice::{LabelMask, ModelWeights, PotentialStack, RoiImage, MASS};
use crate::manifest::ManifestRecord;
use crate::model::{build_potential_stack, ModelConfig, RoiSample, TrainedModel};
use crate::pgm::read_pgm;
use crate::potentials::{fit_gmm, fit_prior, GmmModel, PriorModel};
use crate::preprocess::{enhance_contrast, extract_roi, resize_bicubic, RawImage, RoiAnnotation};
use crate::ssvm::{train_ssvm, SsvmResult};
use crate::synth::sub_seed;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAG_GMM: u64 = 0x474D_4D00;
const TAG_DBN: u64 = 0x4442_4E00;

/// Nearest-neighbor resample of an already cropped mask raster to the
/// canonical square side, then thresholding into labels. Nearest keeps
/// the mask crisp; interpolating a binary raster would blur its boundary.
pub fn mask_from_raw_roi(cropped: &RawImage, side: usize) -> Result<LabelMask> {
    if side == 0 {
        return Err(Error::InvalidValue("mask side must be >= 1".into()));
    }
    let half = if cropped.bit_depth() == 8 { 127 } else { 32767 };
    let mut labels = Vec::with_capacity(side * side);
    for dy in 0..side {
        let sy = (((dy as f64 + 0.5) * cropped.height() as f64 / side as f64) as i64)
            .clamp(0, cropped.height() as i64 - 1);
        for dx in 0..side {
            let sx = (((dx as f64 + 0.5) * cropped.width() as f64 / side as f64) as i64)
                .clamp(0, cropped.width() as i64 - 1);
            let s = cropped.samples()[sy as usize * cropped.width() + sx as usize];
            labels.push(if s > half { MASS } else { -1 });
        }
    }
    LabelMask::new(side, side, labels)
}

/// Crops and resizes one raw image to the canonical ROI.
pub fn roi_from_raw(
    img: &RawImage,
    ann: &RoiAnnotation,
    cfg: &ModelConfig,
) -> Result<RoiImage> {
    let cropped = extract_roi(img, ann, cfg.roi_side_factor)?;
    resize_bicubic(&cropped, cfg.roi_side, cfg.roi_side)
}

/// Loads one manifest record into a canonical ROI sample.
pub fn load_record(record: &ManifestRecord, cfg: &ModelConfig) -> Result<RoiSample> {
    let img = read_pgm(&record.image_path)?;
    let mask_raw = read_pgm(&record.mask_path)?;
    if img.width() != mask_raw.width() || img.height() != mask_raw.height() {
        return Err(Error::LatticeMismatch(
            mask_raw.width(),
            mask_raw.height(),
            img.width(),
            img.height(),
        ));
    }
    let ann = RoiAnnotation::new(record.center_x, record.center_y, record.scale)?;
    ann.validate_for(&img)?;
    let image = roi_from_raw(&img, &ann, cfg)?;
    let cropped_mask = extract_roi(&mask_raw, &ann, cfg.roi_side_factor)?;
    let mask = mask_from_raw_roi(&cropped_mask, cfg.roi_side)?;
    Ok(RoiSample {
        name: record.name.clone(),
        image,
        mask,
    })
}

/// Loads every record of one split.
pub fn load_records(records: &[&ManifestRecord], cfg: &ModelConfig) -> Result<Vec<RoiSample>> {
    records.iter().map(|r| load_record(r, cfg)).collect()
}

/// Fitted sub-models, before weight learning.
#[derive(Debug, Clone)]
pub struct FittedPotentials {
    pub prior: Option<PriorModel>,
    pub gmm: Option<GmmModel>,
    pub dbns: Vec<DbnModel>,
}

/// Stratified patch sample for one DBN: up to `cap` patches drawn
/// half-and-half from the two classes (topping up from the larger class
/// when the smaller runs out).
fn sample_patches(
    images: &[RoiImage],
    masks: &[LabelMask],
    patch_size: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<i8>)> {
    let mut mass_locs = Vec::new();
    let mut bg_locs = Vec::new();
    for (n, mask) in masks.iter().enumerate() {
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) == MASS {
                    mass_locs.push((n, x, y));
                } else {
                    bg_locs.push((n, x, y));
                }
            }
        }
    }
    let total = mass_locs.len() + bg_locs.len();
    let cap = if cap == 0 { total } else { cap.min(total) };
    mass_locs.shuffle(rng);
    bg_locs.shuffle(rng);
    let want_mass = (cap / 2).max(cap.saturating_sub(bg_locs.len()));
    let take_mass = want_mass.min(mass_locs.len());
    let take_bg = (cap - take_mass).min(bg_locs.len());

    let mut patches = Vec::with_capacity(take_mass + take_bg);
    let mut labels = Vec::with_capacity(take_mass + take_bg);
    for (locs, label, take) in [
        (&mass_locs, MASS, take_mass),
        (&bg_locs, -1i8, take_bg),
    ] {
        for &(n, x, y) in locs.iter().take(take) {
            patches.push(extract_patch(&images[n], x, y, patch_size)?);
            labels.push(label);
        }
    }
    Ok((patches, labels))
}

/// Fits every sub-model enabled by the configuration on preprocessed
/// training data. Each stage draws from its own seeded RNG stream, so the
/// result is a pure function of data, configuration and seed.
pub fn fit_potentials(
    images: &[RoiImage],
    masks: &[LabelMask],
    cfg: &ModelConfig,
) -> Result<FittedPotentials> {
    cfg.validate()?;
    if images.len() != masks.len() || images.is_empty() {
        return Err(Error::EmptyInput(
            "fit_potentials needs matching nonempty image and mask lists".into(),
        ));
    }

    let prior = if cfg.use_prior {
        Some(fit_prior(masks, cfg.clamp_epsilon)?)
    } else {
        None
    };

    let gmm = if cfg.use_gmm {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, TAG_GMM));
        Some(fit_gmm(
            images,
            masks,
            cfg.gmm_components,
            cfg.clamp_epsilon,
            &mut rng,
        )?)
    } else {
        None
    };

    let mut dbns = Vec::new();
    if cfg.use_dbn {
        let rbm_cfg = RbmTrainConfig {
            epochs: cfg.dbn_epochs,
            learning_rate: cfg.dbn_learning_rate,
            batch_size: cfg.dbn_batch,
            cd_steps: cfg.dbn_cd_steps,
        };
        let layout = DbnLayout {
            hidden_sizes: cfg.layers.clone(),
        };
        for (i, &patch_size) in cfg.patch_sizes.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, TAG_DBN + i as u64));
            let (patches, labels) =
                sample_patches(images, masks, patch_size, cfg.dbn_patch_cap, &mut rng)?;
            dbns.push(train_dbn(
                &patches,
                &labels,
                &layout,
                &rbm_cfg,
                patch_size,
                cfg.clamp_epsilon,
                &mut rng,
            )?);
        }
    }

    Ok(FittedPotentials { prior, gmm, dbns })
}

/// Builds the per-sample potential stacks for training.
pub fn training_stacks(
    potentials: &FittedPotentials,
    images: &[RoiImage],
    masks: &[LabelMask],
    cfg: &ModelConfig,
) -> Result<Vec<(PotentialStack, LabelMask)>> {
    let probe = TrainedModel {
        config: cfg.clone(),
        prior: potentials.prior.clone(),
        gmm: potentials.gmm.clone(),
        dbns: potentials.dbns.clone(),
        weights: ModelWeights::zeros(cfg.unary_count(), cfg.pairwise_count()),
    };
    probe.validate()?;
    images
        .iter()
        .zip(masks)
        .map(|(img, mask)| Ok((build_potential_stack(img, &probe)?, mask.clone())))
        .collect()
}

/// Learns the weight vector over fitted potentials and assembles the final
/// model.
pub fn train_weights(
    potentials: &FittedPotentials,
    images: &[RoiImage],
    masks: &[LabelMask],
    cfg: &ModelConfig,
) -> Result<(TrainedModel, SsvmResult)> {
    let stacks = training_stacks(potentials, images, masks, cfg)?;
    let result = train_ssvm(&stacks, cfg.ssvm_c, cfg.ssvm_tol, cfg.ssvm_max_iters)?;
    let model = TrainedModel {
        config: cfg.clone(),
        prior: potentials.prior.clone(),
        gmm: potentials.gmm.clone(),
        dbns: potentials.dbns.clone(),
        weights: result.weights.clone(),
    };
    model.validate()?;
    Ok((model, result))
}

/// Full training pass over canonical ROI samples: contrast enhancement,
/// sub-model fitting, cutting-plane weight learning.
pub fn train_model(samples: &[RoiSample], cfg: &ModelConfig) -> Result<(TrainedModel, SsvmResult)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("train_model needs samples".into()));
    }
    let images: Vec<RoiImage> = samples
        .iter()
        .map(|s| {
            if cfg.preprocess {
                enhance_contrast(&s.image, cfg.gamma)
            } else {
                Ok(s.image.clone())
            }
        })
        .collect::<Result<_>>()?;
    let masks: Vec<LabelMask> = samples.iter().map(|s| s.mask.clone()).collect();
    let potentials = fit_potentials(&images, &masks, cfg)?;
    train_weights(&potentials, &images, &masks, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{DatasetManifest, Split};
    use crate::synth::{generate_dataset, generate_sample};

    // Prior + GMM only: a 5-epoch DBN is noise and only slows the test.
    fn fast_config() -> ModelConfig {
        ModelConfig {
            roi_side: 20,
            use_dbn: false,
            patch_sizes: vec![],
            gmm_components: 2,
            ssvm_c: 100.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn mask_resampling_is_nearest_neighbor() {
        // 2x2 mask upscaled to 4x4 keeps hard quadrant boundaries.
        let raw = RawImage::new(2, 2, 8, vec![255, 0, 0, 255]).unwrap();
        let mask = mask_from_raw_roi(&raw, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x < 2) == (y < 2) { MASS } else { -1 };
                assert_eq!(mask.get(x, y), want, "({x},{y})");
            }
        }
    }

    #[test]
    fn patch_sampling_is_stratified_and_capped() {
        let side = 10;
        let mut labels = vec![-1i8; side * side];
        for i in 0..20 {
            labels[i] = MASS;
        }
        let mask = LabelMask::new(side, side, labels).unwrap();
        let img = RoiImage::constant(side, side, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (patches, labels) =
            sample_patches(&[img], &[mask], 3, 30, &mut rng).unwrap();
        assert_eq!(patches.len(), 30);
        let mass_n = labels.iter().filter(|l| **l == MASS).count();
        assert_eq!(mass_n, 15);

        // Cap of zero means everything.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = RoiImage::constant(side, side, 0.5).unwrap();
        let mask = LabelMask::constant(side, side, MASS).unwrap();
        let (patches, _) = sample_patches(&[img], &[mask], 3, 0, &mut rng).unwrap();
        assert_eq!(patches.len(), 100);
    }

    #[test]
    fn training_on_synthetic_samples_converges_and_segments() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate_dataset(dir.path(), 8, 8, 42).unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        let cfg = fast_config();
        let samples = load_records(&manifest.split(Split::Train), &cfg).unwrap();
        assert_eq!(samples.len(), 8);
        for s in &samples {
            assert_eq!(s.image.width(), 20);
            assert_eq!(s.mask.width(), 20);
        }

        let (model, result) = train_model(&samples, &cfg).unwrap();
        assert!(result.iterations <= cfg.ssvm_max_iters);
        let report = crate::eval::evaluate_dataset(&model, &samples).unwrap();
        assert!(
            report.mean_dice > 0.7,
            "training-set dice {} unexpectedly poor",
            report.mean_dice
        );
    }

    #[test]
    fn pipeline_training_is_deterministic() {
        let samples: Vec<RoiSample> = (0..6)
            .map(|i| {
                let s = generate_sample(sub_seed(7, 0x1000 + i));
                let cfg = fast_config();
                let img = roi_from_raw(&s.image, &s.annotation, &cfg).unwrap();
                let cropped = extract_roi(&s.mask, &s.annotation, cfg.roi_side_factor).unwrap();
                RoiSample {
                    name: format!("s{i}"),
                    image: img,
                    mask: mask_from_raw_roi(&cropped, cfg.roi_side).unwrap(),
                }
            })
            .collect();
        let cfg = fast_config();
        let (model_a, _) = train_model(&samples, &cfg).unwrap();
        let (model_b, _) = train_model(&samples, &cfg).unwrap();
        assert_eq!(model_a, model_b);
    }
}
