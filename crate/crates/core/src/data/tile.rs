//! Orthomosaic tiling: cover a large image with fixed-size tiles.

use ndarray::Array3;

use crate::error::{Error, Result};

use super::LabeledImage;

/// Tile start offsets along one axis: stride steps, with the final tile
/// anchored to the far edge so every tile is full-size.
fn tile_offsets(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut x = 0usize;
    loop {
        if x + tile >= extent {
            offsets.push(extent - tile);
            break;
        }
        offsets.push(x);
        x += stride;
    }
    offsets
}

/// Cut a mosaic `(H, W, 3)` into overlapping `tile_size` tiles.
///
/// Stride is `tile_size - overlap`; edge tiles are shifted inward rather
/// than padded, and each tile records its origin in `source_offset`.
pub fn tile_orthomosaic(
    mosaic: &Array3<f64>,
    tile_size: usize,
    overlap: usize,
) -> Result<Vec<LabeledImage>> {
    let (h, w) = (mosaic.shape()[0], mosaic.shape()[1]);
    if tile_size == 0 || overlap >= tile_size {
        return Err(Error::InvalidConfig(format!(
            "tile size {tile_size} must exceed overlap {overlap}"
        )));
    }
    if h < tile_size || w < tile_size {
        return Err(Error::InvalidConfig(format!(
            "mosaic {w}x{h} smaller than tile size {tile_size}"
        )));
    }
    let stride = tile_size - overlap;
    let mut tiles = Vec::new();
    for &oy in &tile_offsets(h, tile_size, stride) {
        for &ox in &tile_offsets(w, tile_size, stride) {
            let mut pixels = Array3::<f64>::zeros((tile_size, tile_size, 3));
            pixels.assign(&mosaic.slice(ndarray::s![
                oy..oy + tile_size,
                ox..ox + tile_size,
                ..
            ]));
            tiles.push(LabeledImage {
                id: format!("tile_x{ox:05}_y{oy:05}"),
                pixels,
                boxes: vec![],
                source_offset: Some((ox, oy)),
            });
        }
    }
    Ok(tiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mosaic(w: usize, h: usize) -> Array3<f64> {
        let mut m = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                m[[y, x, 0]] = (x % 251) as f64 / 251.0;
                m[[y, x, 1]] = (y % 239) as f64 / 239.0;
            }
        }
        m
    }

    #[test]
    fn grid_count() {
        let m = mosaic(6400 / 8, 6400 / 8); // scaled-down 10x10 layout
        let tiles = tile_orthomosaic(&m, 80, 0).unwrap();
        assert_eq!(tiles.len(), 100);
    }

    #[test]
    fn single_tile_identity() {
        let m = mosaic(640, 640);
        let tiles = tile_orthomosaic(&m, 640, 0).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].source_offset, Some((0, 0)));
        assert_eq!(tiles[0].pixels, m);
    }

    #[test]
    fn edge_tile_anchored_inward() {
        let m = mosaic(1000, 640);
        let tiles = tile_orthomosaic(&m, 640, 0).unwrap();
        let offsets: Vec<_> = tiles.iter().map(|t| t.source_offset.unwrap()).collect();
        assert_eq!(offsets, vec![(0, 0), (360, 0)]);
    }

    #[test]
    fn every_pixel_covered_and_tiles_full_size() {
        for (w, h, tile, overlap) in [(100, 90, 32, 8), (64, 64, 64, 0), (130, 70, 50, 10)] {
            let m = mosaic(w, h);
            let tiles = tile_orthomosaic(&m, tile, overlap).unwrap();
            let mut covered = vec![false; w * h];
            for t in &tiles {
                assert_eq!(t.pixels.shape(), &[tile, tile, 3]);
                let (ox, oy) = t.source_offset.unwrap();
                for y in oy..oy + tile {
                    for x in ox..ox + tile {
                        covered[y * w + x] = true;
                        // tile content matches the mosaic
                        assert_eq!(t.pixels[[y - oy, x - ox, 0]], m[[y, x, 0]]);
                    }
                }
            }
            assert!(covered.iter().all(|&c| c), "{w}x{h} tile {tile}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let m = mosaic(100, 100);
        assert!(tile_orthomosaic(&m, 0, 0).is_err());
        assert!(tile_orthomosaic(&m, 32, 32).is_err());
        assert!(tile_orthomosaic(&m, 128, 0).is_err());
    }
}
