//! Anchor grid and the center-offset / log-size box parameterization.

use crate::error::{Error, Result};
use crate::geometry::{clip_box, BBox};

/// Fixed prior boxes: `anchor_sizes.len()` anchors centered in each of
/// `grid_size x grid_size` cells, clipped to the image.
///
/// Anchor `n` corresponds to cell `(gx, gy)` and size index `a` with
/// `n = (gy * grid_size + gx) * num_sizes + a`, matching the detector head
/// output layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub grid_size: usize,
    pub anchor_sizes: Vec<(f64, f64)>,
    pub image_size: usize,
    pub anchors: Vec<BBox>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

pub fn build_anchors(
    grid_size: usize,
    anchor_sizes: &[(f64, f64)],
    image_size: usize,
) -> Result<AnchorGrid> {
    if grid_size == 0 {
        return Err(Error::InvalidConfig("grid size must be >= 1".into()));
    }
    if anchor_sizes.is_empty() {
        return Err(Error::InvalidConfig("no anchor sizes given".into()));
    }
    if anchor_sizes.iter().any(|&(w, h)| w <= 0.0 || h <= 0.0) {
        return Err(Error::InvalidConfig("anchor sizes must be positive".into()));
    }
    let cell = image_size as f64 / grid_size as f64;
    let mut anchors = Vec::with_capacity(grid_size * grid_size * anchor_sizes.len());
    for gy in 0..grid_size {
        for gx in 0..grid_size {
            let cx = (gx as f64 + 0.5) * cell;
            let cy = (gy as f64 + 0.5) * cell;
            for &(w, h) in anchor_sizes {
                let raw = BBox {
                    x_min: cx - w / 2.0,
                    y_min: cy - h / 2.0,
                    x_max: cx + w / 2.0,
                    y_max: cy + h / 2.0,
                };
                let clipped = clip_box(&raw, image_size as f64, image_size as f64)
                    .map_err(|_| Error::InvalidConfig(format!(
                        "anchor {w}x{h} at cell ({gx},{gy}) has no area inside the image"
                    )))?;
                anchors.push(clipped);
            }
        }
    }
    Ok(AnchorGrid {
        grid_size,
        anchor_sizes: anchor_sizes.to_vec(),
        image_size,
        anchors,
    })
}

/// Encode a ground-truth box relative to an anchor:
/// `(dx, dy) = (center offset / anchor size)`, `(dw, dh) = ln(size ratio)`.
pub fn encode_box(gt: &BBox, anchor: &BBox) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    [
        (gcx - acx) / anchor.width(),
        (gcy - acy) / anchor.height(),
        (gt.width() / anchor.width()).ln(),
        (gt.height() / anchor.height()).ln(),
    ]
}

/// Invert [`encode_box`], clipping to the image. Returns `None` when the
/// decoded box has no area inside the image.
pub fn decode_box(deltas: &[f64; 4], anchor: &BBox, image_size: f64) -> Option<BBox> {
    let (acx, acy) = anchor.center();
    // bound the exponent so absurd regressions stay finite
    let dw = deltas[2].clamp(-8.0, 8.0);
    let dh = deltas[3].clamp(-8.0, 8.0);
    let cx = acx + deltas[0] * anchor.width();
    let cy = acy + deltas[1] * anchor.height();
    let w = anchor.width() * dw.exp();
    let h = anchor.height() * dh.exp();
    if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
        return None;
    }
    let raw = BBox {
        x_min: cx - w / 2.0,
        y_min: cy - h / 2.0,
        x_max: cx + w / 2.0,
        y_max: cy + h / 2.0,
    };
    clip_box(&raw, image_size, image_size).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_full_image_anchor() {
        let grid = build_anchors(1, &[(64.0, 64.0)], 64).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.anchors[0], BBox::new(0.0, 0.0, 64.0, 64.0).unwrap());
    }

    #[test]
    fn anchor_count() {
        let grid = build_anchors(8, &[(12.0, 12.0), (20.0, 20.0), (32.0, 32.0)], 128).unwrap();
        assert_eq!(grid.len(), 192);
    }

    #[test]
    fn oversized_anchor_clipped_to_image() {
        let grid = build_anchors(2, &[(100.0, 100.0)], 64).unwrap();
        for a in &grid.anchors {
            assert!(a.x_min >= 0.0 && a.y_min >= 0.0);
            assert!(a.x_max <= 64.0 && a.y_max <= 64.0);
            assert!(a.area() > 0.0);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(build_anchors(0, &[(8.0, 8.0)], 64).is_err());
        assert!(build_anchors(2, &[], 64).is_err());
        assert!(build_anchors(2, &[(0.0, 8.0)], 64).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let grid = build_anchors(4, &[(16.0, 16.0), (24.0, 12.0)], 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let anchor = grid.anchors[rng.gen_range(0..grid.len())];
            let x0 = rng.gen_range(0.0..40.0);
            let y0 = rng.gen_range(0.0..40.0);
            let gt = BBox::new(
                x0,
                y0,
                x0 + rng.gen_range(2.0..24.0),
                y0 + rng.gen_range(2.0..24.0),
            )
            .unwrap();
            let deltas = encode_box(&gt, &anchor);
            let back = decode_box(&deltas, &anchor, 64.0).unwrap();
            for (a, b) in gt.corners().iter().zip(back.corners().iter()) {
                assert!((a - b).abs() < 1e-6, "{gt:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn zero_deltas_decode_to_anchor() {
        let grid = build_anchors(3, &[(10.0, 14.0)], 60).unwrap();
        for a in &grid.anchors {
            let d = decode_box(&[0.0; 4], a, 60.0).unwrap();
            assert_eq!(&d, a);
        }
    }
}
