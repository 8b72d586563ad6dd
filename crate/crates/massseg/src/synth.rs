//! Synthetic benchmark data: desk-scale stand-in for the licensed
//! mammogram datasets.
//!
//! Each sample is a 16-bit graymap with an elliptical bright mass
//! (randomized center, axes and rotation, sigmoid intensity falloff at the
//! boundary) over a textured background gradient, degraded by
//! multiplicative speckle noise, plus an 8-bit 0/255 ground-truth mask and
//! a (center, scale) annotation whose ROI keeps the mass between roughly 8
//! and 38 percent of the crop area.

use crate::manifest::{manifest_line, Split};
use crate::pgm::write_pgm;
use crate::preprocess::{RawImage, RoiAnnotation};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};

/// Side of the generated raw images.
pub const RAW_SIDE: usize = 100;

/// Deterministic per-purpose seed derivation (splitmix64 finalizer).
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SAMPLE: u64 = 0x5359_4E54_0000_0000;

/// One generated sample: raw image, ground-truth mask, annotation.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: RawImage,
    pub mask: RawImage,
    pub annotation: RoiAnnotation,
}

/// Generates one sample deterministically from its own seed.
pub fn generate_sample(seed: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let side = RAW_SIDE;

    // Background: base level, linear gradient, low-frequency texture.
    let base: f64 = rng.gen_range(0.25..0.40);
    let grad_x: f64 = rng.gen_range(-0.10..0.10);
    let grad_y: f64 = rng.gen_range(-0.10..0.10);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.015..0.035),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    // Mass geometry and appearance.
    let center_x: f64 = rng.gen_range(35.0..65.0);
    let center_y: f64 = rng.gen_range(35.0..65.0);
    let major: f64 = rng.gen_range(8.0..16.0);
    let ratio: f64 = rng.gen_range(0.55..1.0);
    let minor = major * ratio;
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let amplitude: f64 = rng.gen_range(0.18..0.32);
    let falloff = 0.08;
    let noise_sigma: f64 = rng.gen_range(0.04..0.07);
    let scale_factor: f64 = rng.gen_range(1.55..2.2);

    // Bright distractor blobs outside the mass: mass-like intensity at the
    // wrong location, so intensity cues alone cannot solve the task.
    let (sin_t, cos_t) = theta.sin_cos();
    let elliptic_d = |x: f64, y: f64| -> f64 {
        let dx = x - center_x;
        let dy = y - center_y;
        let u = cos_t * dx + sin_t * dy;
        let v = -sin_t * dx + cos_t * dy;
        ((u / major).powi(2) + (v / minor).powi(2)).sqrt()
    };
    let distractor_count = rng.gen_range(2..=4);
    let mut distractors: Vec<(f64, f64, f64, f64)> = Vec::new();
    for _ in 0..distractor_count {
        for _attempt in 0..20 {
            let dx = rng.gen_range(5.0..95.0);
            let dy = rng.gen_range(5.0..95.0);
            if elliptic_d(dx, dy) >= 1.6 {
                distractors.push((
                    dx,
                    dy,
                    rng.gen_range(3.0..8.0),
                    rng.gen_range(0.12..0.28),
                ));
                break;
            }
        }
    }

    let mut samples = Vec::with_capacity(side * side);
    let mut mask = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let fx = x as f64 / side as f64;
            let fy = y as f64 / side as f64;
            let mut value = base + grad_x * (fx - 0.5) + grad_y * (fy - 0.5);
            for (amp, wx, wy, phase) in &waves {
                value += amp
                    * (std::f64::consts::TAU * (wx * fx + wy * fy) + phase).sin();
            }
            let d = elliptic_d(x as f64, y as f64);
            value += amplitude * crate::potentials::sigmoid((1.0 - d) / falloff);
            for (cx, cy, radius, amp) in &distractors {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                value += amp * (-r2 / (2.0 * radius * radius)).exp();
            }
            value *= 1.0 + noise_sigma * normal.sample(&mut rng);
            let q = (value.clamp(0.0, 1.0) * 65535.0).round() as u16;
            samples.push(q);
            mask.push(if d <= 1.0 { 255u16 } else { 0 });
        }
    }

    SynthSample {
        image: RawImage::new(side, side, 16, samples).expect("valid synth image"),
        mask: RawImage::new(side, side, 8, mask).expect("valid synth mask"),
        annotation: RoiAnnotation::new(
            center_x.round() as usize,
            center_y.round() as usize,
            scale_factor * major,
        )
        .expect("valid synth annotation"),
    }
}

/// Writes `count` samples under `dir` (images/, masks/) together with a
/// manifest assigning the first `train_count` to the train split. Returns
/// the manifest path. Byte-identical across runs with the same arguments.
pub fn generate_dataset(
    dir: &Path,
    count: usize,
    train_count: usize,
    seed: u64,
) -> Result<PathBuf> {
    if count == 0 {
        return Err(Error::InvalidValue("count must be >= 1".into()));
    }
    if train_count > count {
        return Err(Error::InvalidValue(format!(
            "train count {train_count} exceeds total {count}"
        )));
    }
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    for d in [dir, &images_dir, &masks_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut manifest = String::new();
    for i in 0..count {
        let sample = generate_sample(sub_seed(seed, TAG_SAMPLE + i as u64));
        let image_rel = format!("images/img_{i:04}.pgm");
        let mask_rel = format!("masks/mask_{i:04}.pgm");
        write_pgm(&dir.join(&image_rel), &sample.image)?;
        write_pgm(&dir.join(&mask_rel), &sample.mask)?;
        let split = if i < train_count {
            Split::Train
        } else {
            Split::Test
        };
        manifest.push_str(&manifest_line(
            &image_rel,
            &mask_rel,
            sample.annotation.center_x,
            sample.annotation.center_y,
            sample.annotation.scale,
            split,
        ));
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MASS;

    #[test]
    fn samples_are_deterministic() {
        let a = generate_sample(sub_seed(5, TAG_SAMPLE));
        let b = generate_sample(sub_seed(5, TAG_SAMPLE));
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        let c = generate_sample(sub_seed(6, TAG_SAMPLE));
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn generator_audit_over_1000_samples() {
        // Every sample: binary mask, mass brighter than background, and a
        // ROI-level mass area fraction inside [5%, 40%].
        for i in 0..1000 {
            let s = generate_sample(sub_seed(0, TAG_SAMPLE + i));
            assert!(s.mask.samples().iter().all(|v| *v == 0 || *v == 255));

            let mut mass_sum = 0.0;
            let mut mass_n = 0usize;
            let mut bg_sum = 0.0;
            let mut bg_n = 0usize;
            for (img, m) in s.image.samples().iter().zip(s.mask.samples()) {
                if *m == 255 {
                    mass_sum += *img as f64;
                    mass_n += 1;
                } else {
                    bg_sum += *img as f64;
                    bg_n += 1;
                }
            }
            assert!(mass_n > 0 && bg_n > 0);
            assert!(
                mass_sum / mass_n as f64 > bg_sum / bg_n as f64,
                "sample {i}: mass darker than background"
            );

            let cropped =
                crate::preprocess::extract_roi(&s.mask, &s.annotation, 2.0).unwrap();
            let mask = crate::pipeline::mask_from_raw_roi(&cropped, 40).unwrap();
            let fraction = mask.positive_count() as f64 / 1600.0;
            assert!(
                (0.05..=0.40).contains(&fraction),
                "sample {i}: mass fraction {fraction}"
            );
        }
    }

    #[test]
    fn dataset_generation_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let man_a = generate_dataset(dir_a.path(), 4, 3, 9).unwrap();
        let man_b = generate_dataset(dir_b.path(), 4, 3, 9).unwrap();
        assert_eq!(
            std::fs::read(&man_a).unwrap(),
            std::fs::read(&man_b).unwrap()
        );
        for rel in [
            "images/img_0000.pgm",
            "images/img_0003.pgm",
            "masks/mask_0002.pgm",
        ] {
            assert_eq!(
                std::fs::read(dir_a.path().join(rel)).unwrap(),
                std::fs::read(dir_b.path().join(rel)).unwrap(),
                "{rel} differs"
            );
        }

        let manifest = crate::manifest::DatasetManifest::load(&man_a).unwrap();
        assert_eq!(manifest.split(Split::Train).len(), 3);
        assert_eq!(manifest.split(Split::Test).len(), 1);
    }

    #[test]
    fn generated_rois_preserve_the_mass_through_the_pipeline() {
        let s = generate_sample(sub_seed(2, TAG_SAMPLE));
        let roi_img = crate::preprocess::extract_roi(&s.image, &s.annotation, 2.0).unwrap();
        let resized = crate::preprocess::resize_bicubic(&roi_img, 40, 40).unwrap();
        assert_eq!((resized.width(), resized.height()), (40, 40));
        let roi_mask = crate::preprocess::extract_roi(&s.mask, &s.annotation, 2.0).unwrap();
        let mask = crate::pipeline::mask_from_raw_roi(&roi_mask, 40).unwrap();
        // The mass stays centered: the ROI midpoint is inside it.
        assert_eq!(mask.get(20, 20), MASS);
    }
}
