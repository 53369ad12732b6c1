//! FixMatch-style weak/strong augmentation.
//!
//! The weak branch (teacher side) is a horizontal flip; the strong branch
//! (student side) applies the weak transform plus photometric jitter and
//! cutout, so box geometry only ever changes through the flip.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// Parameter ranges for one augmentation branch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentationSpec {
    pub flip_probability: f64,
    /// Brightness offset drawn from `±brightness`.
    pub brightness: f64,
    /// Contrast factor drawn from `1 ± contrast`.
    pub contrast: f64,
    pub cutout_count: (usize, usize),
    /// Cutout square side, in pixels.
    pub cutout_size: (usize, usize),
}

impl AugmentationSpec {
    pub fn weak() -> Self {
        AugmentationSpec {
            flip_probability: 0.5,
            brightness: 0.0,
            contrast: 0.0,
            cutout_count: (0, 0),
            cutout_size: (0, 0),
        }
    }

    pub fn strong() -> Self {
        AugmentationSpec {
            flip_probability: 0.5,
            brightness: 0.12,
            contrast: 0.15,
            cutout_count: (0, 2),
            cutout_size: (8, 16),
        }
    }
}

/// Horizontal flip with the spec's probability; boxes are reflected with the
/// image. Flipping twice with the same draw restores the original.
pub fn augment_weak<R: Rng>(
    pixels: &Array3<f64>,
    boxes: &[BBox],
    spec: &AugmentationSpec,
    rng: &mut R,
) -> (Array3<f64>, Vec<BBox>) {
    let flip = rng.gen_range(0.0..1.0) < spec.flip_probability;
    if !flip {
        return (pixels.clone(), boxes.to_vec());
    }
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[[y, x, c]] = pixels[[y, w - 1 - x, c]];
            }
        }
    }
    let wf = w as f64;
    let flipped = boxes
        .iter()
        .map(|b| BBox {
            x_min: wf - b.x_max,
            y_min: b.y_min,
            x_max: wf - b.x_min,
            y_max: b.y_max,
        })
        .collect();
    (out, flipped)
}

/// Photometric jitter plus cutout, applied in place of the strong branch's
/// non-geometric tail. Pixel values stay clamped to `[0, 1]`.
pub fn strong_photometric<R: Rng>(pixels: &mut Array3<f64>, spec: &AugmentationSpec, rng: &mut R) {
    let brightness = if spec.brightness > 0.0 {
        rng.gen_range(-spec.brightness..=spec.brightness)
    } else {
        0.0
    };
    let contrast = if spec.contrast > 0.0 {
        rng.gen_range(1.0 - spec.contrast..=1.0 + spec.contrast)
    } else {
        1.0
    };
    if brightness != 0.0 || contrast != 1.0 {
        for v in pixels.iter_mut() {
            *v = ((*v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0);
        }
    }
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let n_cut = if spec.cutout_count.1 > 0 {
        rng.gen_range(spec.cutout_count.0..=spec.cutout_count.1)
    } else {
        0
    };
    for _ in 0..n_cut {
        let side = rng.gen_range(spec.cutout_size.0..=spec.cutout_size.1).min(w.min(h));
        if side == 0 {
            continue;
        }
        let x0 = rng.gen_range(0..=w - side);
        let y0 = rng.gen_range(0..=h - side);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                for c in 0..3 {
                    pixels[[y, x, c]] = 0.0;
                }
            }
        }
    }
}

/// Weak transform followed by photometric jitter and cutout.
pub fn augment_strong<R: Rng>(
    pixels: &Array3<f64>,
    boxes: &[BBox],
    spec: &AugmentationSpec,
    rng: &mut R,
) -> (Array3<f64>, Vec<BBox>) {
    let (mut out, boxes) = augment_weak(pixels, boxes, spec, rng);
    strong_photometric(&mut out, spec, rng);
    (out, boxes)
}
