//! Axis-aligned box arithmetic: IoU, NMS, clipping and jittering.
//!
//! Boxes use corner format `(x_min, y_min, x_max, y_max)` in continuous pixel
//! coordinates; area is `(x_max - x_min) * (y_max - y_min)` with no `+1`
//! discretization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with strictly positive area and finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.is_valid() {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(b)
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Corner coordinates in `[x_min, y_min, x_max, y_max]` order.
    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Box with a detection confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(ScoredBox { bbox, score })
    }
}

/// Intersection over union of two valid boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maximum suppression.
///
/// Candidates below `score_threshold` are dropped, the remainder processed in
/// descending score order (ties keep input order); a box is suppressed when
/// its IoU with an already kept box is strictly greater than `iou_threshold`.
pub fn nms(candidates: &[ScoredBox], iou_threshold: f64, score_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<&ScoredBox> = candidates
        .iter()
        .filter(|c| c.score >= score_threshold)
        .collect();
    // stable sort keeps input order for equal scores
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());

    let mut kept: Vec<ScoredBox> = Vec::new();
    for cand in order {
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold) {
            kept.push(*cand);
        }
    }
    kept
}

/// Clamp a box to `[0, width] x [0, height]`.
///
/// Errors with `DegenerateBox` when clipping collapses it to zero area, in
/// which case the caller drops the box.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> Result<BBox> {
    let x_min = b.x_min.clamp(0.0, width);
    let y_min = b.y_min.clamp(0.0, height);
    let x_max = b.x_max.clamp(0.0, width);
    let y_max = b.y_max.clamp(0.0, height);
    if x_min >= x_max || y_min >= y_max {
        return Err(Error::DegenerateBox);
    }
    Ok(BBox {
        x_min,
        y_min,
        x_max,
        y_max,
    })
}

/// Perturb each coordinate by uniform noise in `±magnitude * dimension`,
/// where x coordinates use the box width and y coordinates the height.
///
/// Draw order is fixed (x_min, x_max, y_min, y_max) so results are
/// reproducible for a given rng state. Magnitudes >= 0.5 could invert a box;
/// a minimal separation is enforced to keep the result valid.
pub fn jitter_box<R: Rng>(b: &BBox, magnitude: f64, rng: &mut R) -> BBox {
    let w = b.width();
    let h = b.height();
    let dx = magnitude * w;
    let dy = magnitude * h;
    let mut x_min = b.x_min + rng.gen_range(-1.0..=1.0) * dx;
    let mut x_max = b.x_max + rng.gen_range(-1.0..=1.0) * dx;
    let mut y_min = b.y_min + rng.gen_range(-1.0..=1.0) * dy;
    let mut y_max = b.y_max + rng.gen_range(-1.0..=1.0) * dy;
    const MIN_EXTENT: f64 = 1e-6;
    if x_max < x_min + MIN_EXTENT {
        let cx = (x_min + x_max) / 2.0;
        x_min = cx - MIN_EXTENT / 2.0;
        x_max = cx + MIN_EXTENT / 2.0;
    }
    if y_max < y_min + MIN_EXTENT {
        let cy = (y_min + y_max) / 2.0;
        y_min = cy - MIN_EXTENT / 2.0;
        y_max = cy + MIN_EXTENT / 2.0;
    }
    BBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}
