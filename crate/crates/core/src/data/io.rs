//! Dataset persistence.
//!
//! A dataset directory holds `annotations.jsonl` (one JSON object per line:
//! `{"id", "width", "height", "boxes": [[x_min,y_min,x_max,y_max], ...]}`)
//! and an `images/` sibling directory with one `<id>.png` per record.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{DatasetSplit, LabeledImage};

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<[f64; 4]>,
}

/// Write pixels as an 8-bit RGB PNG.
pub fn save_png(path: &Path, pixels: &Array3<f64>) -> Result<()> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push((pixels[[y, x, c]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from shape");
    img.save(path)?;
    Ok(())
}

fn load_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut pixels = Array3::<f64>::zeros((h, w, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[y as usize, x as usize, c]] = p.0[c] as f64 / 255.0;
        }
    }
    Ok(pixels)
}

/// Load a single large PNG mosaic.
pub fn load_mosaic(path: &Path) -> Result<Array3<f64>> {
    load_png(path)
}

/// Write `annotations.jsonl` plus `images/<id>.png` under `dir`.
pub fn write_dataset(dir: &Path, images: &[LabeledImage]) -> Result<()> {
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let file = fs::File::create(dir.join("annotations.jsonl"))?;
    let mut out = BufWriter::new(file);
    for img in images {
        let record = AnnotationRecord {
            id: img.id.clone(),
            width: img.width(),
            height: img.height(),
            boxes: img.boxes.iter().map(|b| b.corners()).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        save_png(&image_dir.join(format!("{}.png", img.id)), &img.pixels)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let ann_path = dir.join("annotations.jsonl");
    if !ann_path.exists() {
        return Err(Error::DatasetFormat(format!(
            "no annotations.jsonl in {}",
            dir.display()
        )));
    }
    let file = fs::File::open(&ann_path)?;
    let mut images = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DatasetFormat(format!(
                "duplicate image id {}",
                record.id
            )));
        }
        let pixels = load_png(&dir.join("images").join(format!("{}.png", record.id)))?;
        if pixels.shape()[0] != record.height || pixels.shape()[1] != record.width {
            return Err(Error::DatasetFormat(format!(
                "image {} is {}x{}, annotation says {}x{}",
                record.id,
                pixels.shape()[1],
                pixels.shape()[0],
                record.width,
                record.height
            )));
        }
        let boxes = record
            .boxes
            .iter()
            .map(|&[x0, y0, x1, y1]| BBox::new(x0, y0, x1, y1))
            .collect::<Result<Vec<_>>>()?;
        let img = LabeledImage {
            id: record.id,
            pixels,
            boxes,
            source_offset: None,
        };
        img.validate()?;
        images.push(img);
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(images)
}

/// Split file: JSON `{"fraction", "seed", "labeled": [...], "unlabeled": [...]}`.
pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, split)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, make_split, SynthConfig};

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let images = generate_synthetic_dataset(&SynthConfig {
            count: 3,
            image_size: 32,
            blob_count: (1, 3),
            blob_size: (6.0, 12.0),
            seed: 1,
        })
        .unwrap();
        write_dataset(dir.path(), &images).unwrap();
        let loaded = read_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in images.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.boxes, b.boxes);
            // pixels round-trip through 8-bit quantization
            for (&x, &y) in a.pixels.iter().zip(b.pixels.iter()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }

    #[test]
    fn annotation_file_is_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 2,
            image_size: 24,
            blob_count: (1, 2),
            blob_size: (5.0, 9.0),
            seed: 3,
        };
        write_dataset(dir_a.path(), &generate_synthetic_dataset(&cfg).unwrap()).unwrap();
        write_dataset(dir_b.path(), &generate_synthetic_dataset(&cfg).unwrap()).unwrap();
        let a = fs::read(dir_a.path().join("annotations.jsonl")).unwrap();
        let b = fs::read(dir_b.path().join("annotations.jsonl")).unwrap();
        assert_eq!(a, b);
        let pa = fs::read(dir_a.path().join("images/synth_00000.png")).unwrap();
        let pb = fs::read(dir_b.path().join("images/synth_00000.png")).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn split_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let images = generate_synthetic_dataset(&SynthConfig {
            count: 20,
            image_size: 16,
            blob_count: (0, 1),
            blob_size: (4.0, 6.0),
            seed: 2,
        })
        .unwrap();
        let split = make_split(&images, 0.25, 11).unwrap();
        let path = dir.path().join("split.json");
        write_split(&path, &split).unwrap();
        assert_eq!(read_split(&path).unwrap(), split);
    }

    #[test]
    fn missing_annotations_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::DatasetFormat(_))
        ));
    }
}
