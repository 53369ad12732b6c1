//! Dataset model: images with box annotations, deterministic label-fraction
//! splits, bilinear resize, synthetic generation, orthomosaic tiling, and
//! weak/strong augmentation.

mod augment;
mod io;
mod synth;
mod tile;

pub use augment::{augment_strong, augment_weak, strong_photometric, AugmentationSpec};
pub use io::{
    load_mosaic, read_dataset, read_split, save_png, write_dataset, write_split, AnnotationRecord,
};
pub use synth::{generate_synthetic_dataset, SynthConfig};
pub use tile::tile_orthomosaic;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::derive_rng;

/// Stream tag separating split sampling from other uses of the same seed.
const SPLIT_STREAM: u64 = 0x53504c49;

/// Image with ground-truth boxes. Pixels are `(H, W, 3)` reals in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Array3<f64>,
    pub boxes: Vec<BBox>,
    /// Tile origin `(x, y)` in the parent mosaic, when the image came from
    /// tiling.
    pub source_offset: Option<(usize, usize)>,
}

impl LabeledImage {
    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    /// Check the type invariants: pixels in range and every box in bounds.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height() as f64, self.width() as f64);
        for b in &self.boxes {
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                return Err(Error::DatasetFormat(format!(
                    "box {:?} out of bounds for {}x{} image {}",
                    b.corners(),
                    w,
                    h,
                    self.id
                )));
            }
        }
        if self.pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::DatasetFormat(format!(
                "pixel outside [0,1] in image {}",
                self.id
            )));
        }
        Ok(())
    }

    /// Strip the annotation, keeping id and pixels.
    pub fn to_unlabeled(&self) -> UnlabeledImage {
        UnlabeledImage {
            id: self.id.clone(),
            pixels: self.pixels.clone(),
        }
    }
}

/// Image without annotations.
#[derive(Debug, Clone)]
pub struct UnlabeledImage {
    pub id: String,
    pub pixels: Array3<f64>,
}

/// Deterministic labeled/unlabeled partition of a training set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSplit {
    pub fraction: f64,
    pub seed: u64,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
}

impl DatasetSplit {
    pub fn is_labeled(&self, id: &str) -> bool {
        self.labeled.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }
}

/// Uniformly sample `floor(fraction * N)` images as the labeled subset; the
/// remainder becomes unlabeled.
pub fn make_split(dataset: &[LabeledImage], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction {fraction} outside (0, 1]"
        )));
    }
    let n = dataset.len();
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 {
        return Err(Error::EmptySplit { n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[SPLIT_STREAM]);
    // Fisher-Yates so the sample does not depend on rand's sampler internals
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut labeled: Vec<String> = indices[..k]
        .iter()
        .map(|&i| dataset[i].id.clone())
        .collect();
    let mut unlabeled: Vec<String> = indices[k..]
        .iter()
        .map(|&i| dataset[i].id.clone())
        .collect();
    labeled.sort();
    unlabeled.sort();
    Ok(DatasetSplit {
        fraction,
        seed,
        labeled,
        unlabeled,
    })
}

/// Bilinear resize to `target x target`; boxes are scaled by the same
/// per-axis factors. Boxes that collapse below one pixel are dropped and
/// counted in the returned tally.
pub fn resize(image: &LabeledImage, target: usize) -> Result<(LabeledImage, usize)> {
    if target == 0 {
        return Err(Error::InvalidConfig("resize target must be positive".into()));
    }
    let (h, w) = (image.height(), image.width());
    if h == target && w == target {
        return Ok((image.clone(), 0));
    }
    let sx = w as f64 / target as f64;
    let sy = h as f64 / target as f64;
    let mut out = Array3::<f64>::zeros((target, target, 3));
    for ty in 0..target {
        // sample at pixel centers
        let fy = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for tx in 0..target {
            let fx = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = image.pixels[[y0, x0, c]];
                let v01 = image.pixels[[y0, x1, c]];
                let v10 = image.pixels[[y1, x0, c]];
                let v11 = image.pixels[[y1, x1, c]];
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                out[[ty, tx, c]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    let fx = target as f64 / w as f64;
    let fy = target as f64 / h as f64;
    let mut dropped = 0usize;
    let mut boxes = Vec::with_capacity(image.boxes.len());
    for b in &image.boxes {
        let scaled = BBox::new(b.x_min * fx, b.y_min * fy, b.x_max * fx, b.y_max * fy)?;
        if scaled.width() < 1.0 || scaled.height() < 1.0 {
            dropped += 1;
        } else {
            boxes.push(scaled);
        }
    }
    Ok((
        LabeledImage {
            id: image.id.clone(),
            pixels: out,
            boxes,
            source_offset: image.source_offset,
        },
        dropped,
    ))
}
