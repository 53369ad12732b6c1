//! Synthetic panicle-like dataset generator.
//!
//! Each image is a textured green-brown field with a handful of bright
//! elliptical clusters standing in for panicles; annotation boxes tightly
//! bound each cluster. Blob shapes vary in size, eccentricity and rotation,
//! and a few unannotated dark distractors keep the background non-trivial.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::rng::derive_rng;

use super::LabeledImage;

const IMAGE_STREAM: u64 = 0x53594e54;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub count: usize,
    pub image_size: usize,
    /// Inclusive range of blobs per image.
    pub blob_count: (usize, usize),
    /// Inclusive range of blob bounding-box extents, in pixels.
    pub blob_size: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("image count must be positive".into()));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        if self.blob_count.0 > self.blob_count.1 {
            return Err(Error::InvalidConfig(format!(
                "empty blob count range [{}, {}]",
                self.blob_count.0, self.blob_count.1
            )));
        }
        if self.blob_size.0 > self.blob_size.1 || self.blob_size.0 <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bad blob size range [{}, {}]",
                self.blob_size.0, self.blob_size.1
            )));
        }
        if self.blob_size.1 >= self.image_size as f64 {
            return Err(Error::InvalidConfig(format!(
                "blob size {} exceeds image size {}",
                self.blob_size.1, self.image_size
            )));
        }
        Ok(())
    }
}

/// Smooth value noise: random values on a coarse grid, bilinearly upsampled.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Vec<f64> {
    let g = size / cell + 2;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let fy = y as f64 / cell as f64;
        let gy = fy.floor() as usize;
        let wy = fy - gy as f64;
        for x in 0..size {
            let fx = x as f64 / cell as f64;
            let gx = fx.floor() as usize;
            let wx = fx - gx as f64;
            let v00 = grid[gy * g + gx];
            let v01 = grid[gy * g + gx + 1];
            let v10 = grid[(gy + 1) * g + gx];
            let v11 = grid[(gy + 1) * g + gx + 1];
            out[y * size + x] =
                (v00 * (1.0 - wx) + v01 * wx) * (1.0 - wy) + (v10 * (1.0 - wx) + v11 * wx) * wy;
        }
    }
    out
}

struct Blob {
    cx: f64,
    cy: f64,
    /// Semi-axes of the ellipse.
    a: f64,
    b: f64,
    /// Rotation in radians.
    theta: f64,
    brightness: f64,
}

impl Blob {
    /// Tight axis-aligned bounds of the rotated ellipse.
    fn bbox(&self) -> BBox {
        let (s, c) = self.theta.sin_cos();
        let ex = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let ey = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        BBox {
            x_min: self.cx - ex,
            y_min: self.cy - ey,
            x_max: self.cx + ex,
            y_max: self.cy + ey,
        }
    }
}

fn render_image(cfg: &SynthConfig, index: usize) -> LabeledImage {
    let size = cfg.image_size;
    let mut rng = derive_rng(cfg.seed, &[IMAGE_STREAM, index as u64]);

    // field background: two soil/foliage tones mixed by smooth noise
    let base_a = [
        rng.gen_range(0.16..0.26),
        rng.gen_range(0.30..0.42),
        rng.gen_range(0.08..0.16),
    ];
    let base_b = [
        rng.gen_range(0.28..0.40),
        rng.gen_range(0.24..0.34),
        rng.gen_range(0.12..0.20),
    ];
    let coarse = value_noise(&mut rng, size, 16.max(size / 8));
    let fine = value_noise(&mut rng, size, 4);
    let mut pixels = Array3::<f64>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let t = coarse[y * size + x];
            let tex = 0.85 + 0.3 * fine[y * size + x];
            for c in 0..3 {
                let v = (base_a[c] * (1.0 - t) + base_b[c] * t) * tex;
                pixels[[y, x, c]] = v.clamp(0.0, 1.0);
            }
        }
    }
    // per-pixel sensor noise
    for v in pixels.iter_mut() {
        *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }

    // dark unannotated distractors (shadow patches)
    let n_distract = rng.gen_range(0..=3);
    for _ in 0..n_distract {
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let r = rng.gen_range(4.0..12.0);
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(size as f64)) as usize;
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(size as f64)) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (r * r);
                if d2 < 1.0 {
                    let fade = 0.45 + 0.55 * d2;
                    for c in 0..3 {
                        pixels[[y, x, c]] *= fade;
                    }
                }
            }
        }
    }

    // panicle blobs
    let k = rng.gen_range(cfg.blob_count.0..=cfg.blob_count.1);
    let mut blobs: Vec<Blob> = Vec::with_capacity(k);
    let mut boxes: Vec<BBox> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(Blob, BBox, f64)> = None;
        for _attempt in 0..30 {
            let extent = rng.gen_range(cfg.blob_size.0..=cfg.blob_size.1);
            let ecc = rng.gen_range(0.55..1.0);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let a = extent / 2.0;
            let b = a * ecc;
            let margin = extent / 2.0 + 1.0;
            let lo = margin;
            let hi = size as f64 - margin;
            if hi <= lo {
                break;
            }
            let blob = Blob {
                cx: rng.gen_range(lo..hi),
                cy: rng.gen_range(lo..hi),
                a,
                b,
                theta,
                brightness: rng.gen_range(0.75..1.0),
            };
            let bb = blob.bbox();
            let worst = boxes.iter().map(|e| iou(e, &bb)).fold(0.0, f64::max);
            if worst < 0.2 {
                best = Some((blob, bb, worst));
                break;
            }
            match &best {
                Some((_, _, w)) if *w <= worst => {}
                _ => best = Some((blob, bb, worst)),
            }
        }
        if let Some((blob, bb, _)) = best {
            blobs.push(blob);
            boxes.push(bb);
        }
    }

    for blob in &blobs {
        let bb = blob.bbox();
        let y0 = bb.y_min.floor().max(0.0) as usize;
        let y1 = (bb.y_max.ceil() as usize).min(size);
        let x0 = bb.x_min.floor().max(0.0) as usize;
        let x1 = (bb.x_max.ceil() as usize).min(size);
        let (st, ct) = blob.theta.sin_cos();
        let tint = [
            blob.brightness,
            blob.brightness * rng.gen_range(0.82..0.95),
            blob.brightness * rng.gen_range(0.45..0.65),
        ];
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - blob.cx;
                let dy = y as f64 + 0.5 - blob.cy;
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                let r2 = (u / blob.a).powi(2) + (v / blob.b).powi(2);
                if r2 >= 1.0 {
                    continue;
                }
                let r = r2.sqrt();
                // soft edge over the outer 25%, grainy interior
                let edge = ((1.0 - r) / 0.25).clamp(0.0, 1.0);
                let grain = 0.82 + 0.18 * ((x * 31 + y * 17 + index) % 7) as f64 / 6.0;
                let alpha = edge * grain;
                for c in 0..3 {
                    let p = pixels[[y, x, c]];
                    pixels[[y, x, c]] = (p * (1.0 - alpha) + tint[c] * alpha).clamp(0.0, 1.0);
                }
            }
        }
    }

    LabeledImage {
        id: format!("synth_{index:05}"),
        pixels,
        boxes,
        source_offset: None,
    }
}

/// Generate `count` annotated images, deterministically in `seed`. Images
/// are rendered in parallel from per-index derived rng streams, so the
/// result does not depend on scheduling.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Vec<LabeledImage>> {
    cfg.validate()?;
    Ok((0..cfg.count)
        .into_par_iter()
        .map(|i| render_image(cfg, i))
        .collect())
}
