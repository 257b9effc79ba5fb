//! Dataset building from an `images/` + `masks/` segmentation corpus.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};
use log::{error, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_sample, SynthesisConfig, SynthesisMode, TrainingSample};
use crate::error::{Error, Result};
use crate::raster::io::{
    load_focus_map, load_image, load_label_mask, save_focus_map, save_image, LabelMask,
};
use crate::raster::{FocusMap, Image};

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub sigma: f64,
    pub mode: SynthesisMode,
    pub width: usize,
    pub height: usize,
}

/// Void (255) and label 0 are background, every other class is foreground.
/// Plain grayscale masks that only contain 0 and 255 are read as binary masks.
fn binarize_labels(mask: &LabelMask) -> FocusMap {
    let binary_gray = !mask.indexed && mask.labels.iter().all(|&v| v == 0 || v == 255);
    let data = mask
        .labels
        .iter()
        .map(|&v| {
            if binary_gray {
                (v == 255) as u8
            } else {
                (v != 0 && v != 255) as u8
            }
        })
        .collect();
    FocusMap::new(mask.height, mask.width, data).expect("binary by construction")
}

fn image_buffer(img: &Image) -> ImageBuffer<Rgb<f32>, Vec<f32>> {
    let (h, w) = (img.height(), img.width());
    let rgb = img.to_rgb();
    let n = h * w;
    let mut raw = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            raw.push(rgb.data()[c * n + i] as f32);
        }
    }
    ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer")
}

fn from_buffer(buf: &ImageBuffer<Rgb<f32>, Vec<f32>>, channels: usize) -> Result<Image> {
    let (w, h) = buf.dimensions();
    let (w, h) = (w as usize, h as usize);
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in buf.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64;
        }
    }
    if channels == 1 {
        data.truncate(n);
    }
    Image::from_clamped(h, w, channels, data)
}

/// Resizes the shorter side to `size` and takes a random `size×size` crop.
fn resize_and_crop(
    img: &Image,
    map: &FocusMap,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, FocusMap)> {
    let (h, w) = (img.height(), img.width());
    let scale = size as f64 / h.min(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).max(size);
    let nw = ((w as f64 * scale).round() as usize).max(size);
    let (img, map) = if (nh, nw) == (h, w) {
        (img.clone(), map.clone())
    } else {
        let resized = imageops::resize(
            &image_buffer(img),
            nw as u32,
            nh as u32,
            FilterType::Triangle,
        );
        let mask_buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(w as u32, h as u32, map.data().to_vec()).expect("sized buffer");
        let mask = imageops::resize(&mask_buf, nw as u32, nh as u32, FilterType::Nearest);
        (
            from_buffer(&resized, img.channels())?,
            FocusMap::new(nh, nw, mask.into_raw())?,
        )
    };
    let top = rng.gen_range(0..=nh - size);
    let left = rng.gen_range(0..=nw - size);
    Ok((
        img.crop(top, left, size, size)?,
        map.crop(top, left, size, size)?,
    ))
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn sample_paths(out_dir: &Path, id: &str) -> [PathBuf; 4] {
    let s = out_dir.join("samples");
    ["a", "b", "f", "gt"].map(|k| s.join(format!("{id}_{k}.png")))
}

/// Synthesizes one training sample per image/mask pair and writes
/// `samples/<id>_{a,b,f,gt}.png` plus `manifest.jsonl` under `out_dir`.
///
/// Pairs are processed in sorted id order with a single seeded generator, so
/// the manifest is reproducible byte for byte.
pub fn build_dataset(
    corpus_dir: &Path,
    out_dir: &Path,
    config: &SynthesisConfig,
) -> Result<Vec<ManifestRow>> {
    config.validate()?;
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();

    for (id, img_path) in list_images(&corpus_dir.join("images"))? {
        let mask_path = corpus_dir.join("masks").join(format!("{id}.png"));
        if !mask_path.exists() {
            warn!("no mask for {id}, skipping");
            continue;
        }
        let sigma = rng.gen_range(config.sigma_range[0]..=config.sigma_range[1]);
        let img = match load_image(&img_path) {
            Ok(img) => img,
            Err(e) => {
                error!("{e}");
                continue;
            }
        };
        let mask = match load_label_mask(&mask_path) {
            Ok(m) => binarize_labels(&m),
            Err(e) => {
                error!("{e}");
                continue;
            }
        };
        if !mask.matches(&img) {
            error!(
                "{id}: mask {}x{} does not match image {}x{}",
                mask.height(),
                mask.width(),
                img.height(),
                img.width()
            );
            continue;
        }
        let (img, mask) = resize_and_crop(&img, &mask, config.crop_size, &mut rng)?;
        let sample = make_sample(config.mode, img, mask, sigma)?;
        rows.push(save_sample(out_dir, &id, config.mode, &sample)?);
    }
    write_manifest(out_dir, &rows)?;
    Ok(rows)
}

/// Writes `samples/<id>_{a,b,f,gt}.png` and returns the manifest row.
pub fn save_sample(
    out_dir: &Path,
    id: &str,
    mode: SynthesisMode,
    sample: &TrainingSample,
) -> Result<ManifestRow> {
    let [pa, pb, pf, pgt] = sample_paths(out_dir, id);
    save_image(&sample.source_a, &pa)?;
    save_image(&sample.source_b, &pb)?;
    save_focus_map(&sample.focus_map, &pf)?;
    save_image(&sample.ground_truth, &pgt)?;
    Ok(ManifestRow {
        id: id.to_string(),
        sigma: sample.sigma_used,
        mode,
        width: sample.focus_map.width(),
        height: sample.focus_map.height(),
    })
}

/// Writes `manifest.jsonl`, one JSON object per line.
pub fn write_manifest(out_dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = out_dir.join("manifest.jsonl");
    let mut file = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for row in rows {
        writeln!(file, "{}", serde_json::to_string(row)?).map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(())
}

/// Loads every sample listed in `<dir>/manifest.jsonl`.
pub fn load_dataset(dir: &Path) -> Result<Vec<(ManifestRow, TrainingSample)>> {
    let manifest = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line)?;
        let [pa, pb, pf, pgt] = sample_paths(dir, &row.id);
        let sample = TrainingSample {
            source_a: load_image(&pa)?,
            source_b: load_image(&pb)?,
            focus_map: load_focus_map(&pf)?,
            ground_truth: load_image(&pgt)?,
            sigma_used: row.sigma,
        };
        out.push((row, sample));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voc_binarization() {
        let m = LabelMask {
            height: 1,
            width: 4,
            labels: vec![0, 3, 255, 15],
            indexed: true,
        };
        assert_eq!(binarize_labels(&m).data(), &[0, 1, 0, 1]);
        let m = LabelMask {
            height: 1,
            width: 3,
            labels: vec![0, 255, 0],
            indexed: false,
        };
        assert_eq!(binarize_labels(&m).data(), &[0, 1, 0]);
    }

    #[test]
    fn resize_crop_hits_target_size() {
        let img = Image::filled(30, 50, 3, 0.5).unwrap();
        let map = FocusMap::from_fn(30, 50, |y, _| y > 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (i, m) = resize_and_crop(&img, &map, 16, &mut rng).unwrap();
        assert_eq!(
            (i.height(), i.width(), m.height(), m.width()),
            (16, 16, 16, 16)
        );
        assert!(i.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }
}
