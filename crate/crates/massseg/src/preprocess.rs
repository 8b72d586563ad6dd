//! ROI extraction, bicubic resizing and contrast enhancement.
//!
//! A raw mammogram plus a manual (center, scale) annotation becomes a
//! canonical ROI: square crop of side `2 * scale` (edge-replicated at the
//! borders), bicubic resample to the target lattice, intensity
//! normalization to `[0, 1]`, then a monotone contrast mapping (percentile
//! stretch followed by gamma correction).

use crate::lattice::RoiImage;
use crate::{Error, Result};

/// Integer image with a declared bit depth of 8 or 16.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    bit_depth: u8,
    samples: Vec<u16>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, bit_depth: u8, samples: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("image dimensions must be >= 1".into()));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::InvalidValue(format!(
                "bit depth {bit_depth} not supported (8 or 16)"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        let max = Self::max_value(bit_depth);
        if let Some(s) = samples.iter().find(|s| **s > max) {
            return Err(Error::InvalidValue(format!(
                "sample {s} exceeds {max} for bit depth {bit_depth}"
            )));
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            samples,
        })
    }

    fn max_value(bit_depth: u8) -> u16 {
        if bit_depth == 8 {
            u8::MAX as u16
        } else {
            u16::MAX
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    /// Sample with edge replication for out-of-bounds coordinates.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u16 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.samples[yc * self.width + xc]
    }
}

/// Manual mass annotation: center pixel and scale in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiAnnotation {
    pub center_x: usize,
    pub center_y: usize,
    pub scale: f64,
}

impl RoiAnnotation {
    pub fn new(center_x: usize, center_y: usize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidValue(format!("scale {scale} must be > 0")));
        }
        Ok(Self {
            center_x,
            center_y,
            scale,
        })
    }

    pub fn validate_for(&self, img: &RawImage) -> Result<()> {
        if self.center_x >= img.width() || self.center_y >= img.height() {
            return Err(Error::InvalidValue(format!(
                "annotation center ({}, {}) outside {}x{} image",
                self.center_x,
                self.center_y,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

/// Crop side for a given scale and side factor: the nearest even integer to
/// `factor * scale` (ties away from zero).
pub fn roi_side(scale: f64, side_factor: f64) -> usize {
    let half = (side_factor * scale / 2.0).round().max(1.0);
    2 * half as usize
}

/// Square crop of side `side_factor * scale` (default factor 2) centered on
/// the annotation. Out-of-bounds pixels are filled by edge replication.
pub fn extract_roi(img: &RawImage, ann: &RoiAnnotation, side_factor: f64) -> Result<RawImage> {
    ann.validate_for(img)?;
    let side = roi_side(ann.scale, side_factor);
    let half = (side / 2) as i64;
    let x0 = ann.center_x as i64 - half;
    let y0 = ann.center_y as i64 - half;
    let mut samples = Vec::with_capacity(side * side);
    for dy in 0..side as i64 {
        for dx in 0..side as i64 {
            samples.push(img.get_clamped(x0 + dx, y0 + dy));
        }
    }
    RawImage::new(side, side, img.bit_depth(), samples)
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
fn catmull_rom(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic (Catmull-Rom) resample to `out_w x out_h`, normalized to `[0, 1]`
/// by the bit-depth maximum and clamped.
pub fn resize_bicubic(img: &RawImage, out_w: usize, out_h: usize) -> Result<RoiImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidValue("output dimensions must be >= 1".into()));
    }
    let scale_x = img.width() as f64 / out_w as f64;
    let scale_y = img.height() as f64 / out_h as f64;
    let norm = RawImage::max_value(img.bit_depth()) as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for dy in 0..out_h {
        // Pixel-center mapping: same-size resampling is the identity.
        let sy = (dy as f64 + 0.5) * scale_y - 0.5;
        let y_base = sy.floor() as i64;
        let ty = sy - y_base as f64;
        let wy = [
            catmull_rom(ty + 1.0),
            catmull_rom(ty),
            catmull_rom(ty - 1.0),
            catmull_rom(ty - 2.0),
        ];
        for dx in 0..out_w {
            let sx = (dx as f64 + 0.5) * scale_x - 0.5;
            let x_base = sx.floor() as i64;
            let tx = sx - x_base as f64;
            let wx = [
                catmull_rom(tx + 1.0),
                catmull_rom(tx),
                catmull_rom(tx - 1.0),
                catmull_rom(tx - 2.0),
            ];
            let mut acc = 0.0;
            for (j, wyj) in wy.iter().enumerate() {
                let mut row = 0.0;
                for (i, wxi) in wx.iter().enumerate() {
                    let s = img.get_clamped(x_base - 1 + i as i64, y_base - 1 + j as i64);
                    row += wxi * s as f64;
                }
                acc += wyj * row;
            }
            out.push((acc / norm).clamp(0.0, 1.0));
        }
    }
    RoiImage::new(out_w, out_h, out)
}

/// Monotone contrast amplification: percentile stretch mapping the 2nd/98th
/// intensity percentiles to 0/1, then gamma correction. Degenerate images
/// (no percentile spread) are returned unchanged.
pub fn enhance_contrast(img: &RoiImage, gamma: f64) -> Result<RoiImage> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidValue(format!("gamma {gamma} must be > 0")));
    }
    let lo = percentile(img.intensities(), 0.02);
    let hi = percentile(img.intensities(), 0.98);
    if hi - lo < 1e-12 {
        return Ok(img.clone());
    }
    let span = hi - lo;
    let out = img
        .intensities()
        .iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0).powf(gamma))
        .collect();
    RoiImage::new(img.width(), img.height(), out)
}

/// Linear-interpolation percentile (fraction `q` in `[0, 1]`) over all values.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_image(width: usize, height: usize) -> RawImage {
        let samples = (0..width * height).map(|i| (i % 251) as u16).collect();
        RawImage::new(width, height, 8, samples).unwrap()
    }

    #[test]
    fn crop_is_the_annotated_window() {
        let img = ramp_image(200, 200);
        let ann = RoiAnnotation::new(100, 100, 20.0).unwrap();
        let roi = extract_roi(&img, &ann, 2.0).unwrap();
        assert_eq!((roi.width(), roi.height()), (40, 40));
        for dy in 0..40 {
            for dx in 0..40 {
                assert_eq!(
                    roi.samples()[dy * 40 + dx],
                    img.samples()[(80 + dy) * 200 + (80 + dx)]
                );
            }
        }
    }

    #[test]
    fn corner_crop_replicates_edges() {
        let img = ramp_image(10, 10);
        let ann = RoiAnnotation::new(0, 0, 2.0).unwrap();
        let roi = extract_roi(&img, &ann, 2.0).unwrap();
        assert_eq!((roi.width(), roi.height()), (4, 4));
        // Crop window is [-2, 2) x [-2, 2); negative coordinates clamp to 0.
        for dy in 0..4i64 {
            for dx in 0..4i64 {
                let expected = img.get_clamped(dx - 2, dy - 2);
                assert_eq!(roi.samples()[(dy * 4 + dx) as usize], expected);
            }
        }
        assert_eq!(roi.samples()[0], img.samples()[0]);
    }

    #[test]
    fn constant_image_crops_to_constant() {
        let img = RawImage::new(30, 30, 8, vec![90; 900]).unwrap();
        let ann = RoiAnnotation::new(5, 25, 6.0).unwrap();
        let roi = extract_roi(&img, &ann, 2.0).unwrap();
        assert!(roi.samples().iter().all(|s| *s == 90));
    }

    #[test]
    fn crop_side_is_even_and_tracks_scale() {
        assert_eq!(roi_side(20.0, 2.0), 40);
        assert_eq!(roi_side(2.3, 2.0), 4);
        assert_eq!(roi_side(2.5, 2.0), 6);
        assert_eq!(roi_side(20.0, 4.0), 80);
        for s in 1..50 {
            let side = roi_side(s as f64 * 0.7, 2.0);
            assert_eq!(side % 2, 0);
            assert!((side as f64 - 2.0 * (s as f64 * 0.7)).abs() <= 1.0);
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<u16> = (0..64).map(|_| rng.gen_range(0..=255)).collect();
        let img = RawImage::new(8, 8, 8, samples).unwrap();
        let out = resize_bicubic(&img, 8, 8).unwrap();
        for (o, s) in out.intensities().iter().zip(img.samples()) {
            assert!((o - *s as f64 / 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = RawImage::new(5, 7, 16, vec![30000; 35]).unwrap();
        let out = resize_bicubic(&img, 11, 3).unwrap();
        let expected = 30000.0 / 65535.0;
        for v in out.intensities() {
            assert!((v - expected).abs() < 1e-9);
        }
    }

    // Independent Catmull-Rom oracle: direct non-separable evaluation of the
    // kernel product over the 4x4 neighborhood.
    fn direct_bicubic(img: &RawImage, out_w: usize, out_h: usize, dx: usize, dy: usize) -> f64 {
        fn kernel(x: f64) -> f64 {
            let t = x.abs();
            if t <= 1.0 {
                1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
            } else if t < 2.0 {
                -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
            } else {
                0.0
            }
        }
        let sx = (dx as f64 + 0.5) * img.width() as f64 / out_w as f64 - 0.5;
        let sy = (dy as f64 + 0.5) * img.height() as f64 / out_h as f64 - 0.5;
        let mut acc = 0.0;
        for j in -1i64..=2 {
            for i in -1i64..=2 {
                let px = sx.floor() as i64 + i;
                let py = sy.floor() as i64 + j;
                let w = kernel(sx - px as f64) * kernel(sy - py as f64);
                acc += w * img.get_clamped(px, py) as f64;
            }
        }
        (acc / 255.0).clamp(0.0, 1.0)
    }

    #[test]
    fn checkerboard_upscale_matches_direct_kernel_evaluation() {
        let img = RawImage::new(2, 2, 8, vec![0, 255, 255, 0]).unwrap();
        let out = resize_bicubic(&img, 4, 4).unwrap();
        for dy in 0..4 {
            for dx in 0..4 {
                let want = direct_bicubic(&img, 4, 4, dx, dy);
                let got = out.get(dx, dy);
                assert!(
                    (got - want).abs() < 1e-12,
                    "({dx},{dy}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn random_resizes_match_direct_kernel_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<u16> = (0..100).map(|_| rng.gen_range(0..=255)).collect();
        let img = RawImage::new(10, 10, 8, samples).unwrap();
        for (ow, oh) in [(7, 13), (20, 5), (10, 10)] {
            let out = resize_bicubic(&img, ow, oh).unwrap();
            for dy in 0..oh {
                for dx in 0..ow {
                    let want = direct_bicubic(&img, ow, oh, dx, dy);
                    assert!((out.get(dx, dy) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_image_is_not_enhanced() {
        let img = RoiImage::constant(6, 6, 0.42).unwrap();
        let out = enhance_contrast(&img, 0.5).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn two_valued_image_stretches_to_full_range() {
        let mut vals = vec![0.2; 32];
        vals.extend(vec![0.8; 32]);
        let img = RoiImage::new(8, 8, vals).unwrap();
        let out = enhance_contrast(&img, 0.5).unwrap();
        for (o, v) in out.intensities().iter().zip(img.intensities()) {
            let want = if *v < 0.5 { 0.0 } else { 1.0 };
            assert!((o - want).abs() < 1e-12);
        }
    }

    #[test]
    fn enhancement_preserves_rank_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let img = RoiImage::new(20, 20, vals).unwrap();
        let out = enhance_contrast(&img, 0.5).unwrap();
        // Sorting input indices by intensity must sort the output too.
        let mut order: Vec<usize> = (0..400).collect();
        order.sort_by(|a, b| {
            img.intensities()[*a]
                .partial_cmp(&img.intensities()[*b])
                .unwrap()
        });
        for pair in order.windows(2) {
            assert!(out.intensities()[pair[0]] <= out.intensities()[pair[1]] + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn enhancement_is_monotone_and_in_range(
            vals in proptest::collection::vec(0.0f64..=1.0, 16..64),
            gamma in 0.1f64..3.0,
        ) {
            let n = vals.len();
            let img = RoiImage::new(n, 1, vals).unwrap();
            let out = enhance_contrast(&img, gamma).unwrap();
            for (i, a) in img.intensities().iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&out.intensities()[i]));
                for (j, b) in img.intensities().iter().enumerate() {
                    if a <= b {
                        prop_assert!(out.intensities()[i] <= out.intensities()[j] + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn resize_output_stays_in_range(
            seed in 0u64..1000,
            ow in 1usize..12,
            oh in 1usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<u16> = (0..36).map(|_| rng.gen_range(0..=65535)).collect();
            let img = RawImage::new(6, 6, 16, samples).unwrap();
            let out = resize_bicubic(&img, ow, oh).unwrap();
            for v in out.intensities() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
