//! Training-batch augmentation: random horizontal flip and random crop after
//! four pixels of zero padding on every side.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::ImageShape;

/// Padding width used by the crop augmentation.
pub const CROP_PAD: usize = 4;

/// Which augmentations apply to training batches. Evaluation always runs on
/// raw features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Mirror each image left-right with probability 1/2.
    pub horizontal_flip: bool,
    /// Zero-pad [`CROP_PAD`] pixels on every side, then crop back to the
    /// original size at a uniformly random offset.
    pub pad_crop: bool,
}

impl AugmentPolicy {
    pub fn off() -> Self {
        Self {
            horizontal_flip: false,
            pad_crop: false,
        }
    }

    pub fn flip_and_crop() -> Self {
        Self {
            horizontal_flip: true,
            pad_crop: true,
        }
    }

    pub fn is_off(&self) -> bool {
        !self.horizontal_flip && !self.pad_crop
    }
}

/// Mirrors the width axis of every channel plane.
pub(crate) fn flip_image(pixels: &mut [f64], (c, h, w): ImageShape) {
    for ch in 0..c {
        for row in 0..h {
            pixels[(ch * h + row) * w..(ch * h + row + 1) * w].reverse();
        }
    }
}

/// Crops an `h x w` window out of the zero-padded image at offset
/// `(dy, dx)` from the padded origin. Offset `(CROP_PAD, CROP_PAD)` recovers
/// the original image.
pub(crate) fn crop_at(pixels: &[f64], (c, h, w): ImageShape, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for ch in 0..c {
        for row in 0..h {
            // source row in padded coordinates
            let src_row = row + dy;
            if src_row < CROP_PAD || src_row >= h + CROP_PAD {
                continue;
            }
            let src_row = src_row - CROP_PAD;
            for col in 0..w {
                let src_col = col + dx;
                if src_col < CROP_PAD || src_col >= w + CROP_PAD {
                    continue;
                }
                out[(ch * h + row) * w + col] =
                    pixels[(ch * h + src_row) * w + (src_col - CROP_PAD)];
            }
        }
    }
    out
}

/// Applies the policy to every image in the batch independently: first the
/// coin-flip mirror, then the random crop. Consumes exactly one bool per
/// image when flipping is on and two offsets when cropping is on, so a given
/// rng state maps to one deterministic output.
pub fn augment_batch<R: Rng>(
    batch: &Matrix,
    policy: &AugmentPolicy,
    shape: ImageShape,
    rng: &mut R,
) -> Result<Matrix> {
    let (c, h, w) = shape;
    if batch.cols() != c * h * w {
        return Err(Error::DimensionMismatch(format!(
            "batch width {} does not match image shape {c}x{h}x{w}",
            batch.cols()
        )));
    }
    if policy.is_off() {
        return Ok(batch.clone());
    }
    let mut out = batch.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if policy.horizontal_flip && rng.random::<bool>() {
            flip_image(row, shape);
        }
        if policy.pad_crop {
            let dy = rng.random_range(0..=2 * CROP_PAD);
            let dx = rng.random_range(0..=2 * CROP_PAD);
            let cropped = crop_at(row, shape, dy, dx);
            row.copy_from_slice(&cropped);
        }
    }
    Ok(out)
}
