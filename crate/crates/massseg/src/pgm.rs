//! Binary portable graymap (P5) reading and writing.
//!
//! 8-bit rasters use one byte per sample; anything with a maxval above 255
//! uses two bytes per sample, big-endian. Masks are 8-bit images holding
//! only 0 and 255.

use crate::lattice::{LabelMask, BACKGROUND, MASS};
use crate::preprocess::RawImage;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Parses a P5 graymap. The declared maxval selects the bit depth: 255 or
/// below is 8-bit, anything above is 16-bit big-endian.
pub fn read_pgm(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    let mut pos = 0usize;

    fn skip_separators(bytes: &[u8], mut pos: usize) -> usize {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                return pos;
            }
        }
    }

    fn read_token(bytes: &[u8], pos: usize) -> std::result::Result<(usize, usize), String> {
        let start = skip_separators(bytes, pos);
        let mut end = start;
        while end < bytes.len() && !bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        if start == end {
            return Err("truncated header".into());
        }
        let token = std::str::from_utf8(&bytes[start..end]).map_err(|_| "non-ASCII header")?;
        let value: usize = token.parse().map_err(|_| format!("bad integer {token:?}"))?;
        Ok((value, end))
    }

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err("not a P5 graymap".into());
    }
    pos += 2;
    let (width, next) = read_token(bytes, pos)?;
    let (height, next) = read_token(bytes, next)?;
    let (maxval, next) = read_token(bytes, next)?;
    if width == 0 || height == 0 {
        return Err("zero dimensions".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos = next + 1;
    if next >= bytes.len() || !bytes[next].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }

    let count = width * height;
    let (bit_depth, samples) = if maxval <= 255 {
        if bytes.len() - pos < count {
            return Err("truncated raster".into());
        }
        (8u8, bytes[pos..pos + count].iter().map(|b| *b as u16).collect())
    } else {
        if bytes.len() - pos < 2 * count {
            return Err("truncated raster".into());
        }
        (
            16u8,
            bytes[pos..pos + 2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        )
    };
    RawImage::new(width, height, bit_depth, samples).map_err(|e| e.to_string())
}

/// Writes a P5 graymap; 16-bit samples are written big-endian.
pub fn write_pgm(path: &Path, img: &RawImage) -> Result<()> {
    let maxval: u32 = if img.bit_depth() == 8 { 255 } else { 65535 };
    let mut out = Vec::with_capacity(img.samples().len() * 2 + 32);
    write!(out, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval)
        .expect("write to Vec cannot fail");
    if img.bit_depth() == 8 {
        out.extend(img.samples().iter().map(|s| *s as u8));
    } else {
        for s in img.samples() {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Renders a label mask as an 8-bit graymap with 255 for mass and 0 for
/// background.
pub fn mask_to_raw(mask: &LabelMask) -> RawImage {
    let samples = mask
        .labels()
        .iter()
        .map(|l| if *l == MASS { 255u16 } else { 0 })
        .collect();
    RawImage::new(mask.width(), mask.height(), 8, samples).expect("valid mask raster")
}

/// Thresholds a raw image into a label mask: samples above half the
/// bit-depth maximum become mass.
pub fn raw_to_mask(img: &RawImage) -> LabelMask {
    let half = if img.bit_depth() == 8 { 127 } else { 32767 };
    let labels = img
        .samples()
        .iter()
        .map(|s| if *s > half { MASS } else { BACKGROUND })
        .collect();
    LabelMask::new(img.width(), img.height(), labels).expect("valid labels")
}
