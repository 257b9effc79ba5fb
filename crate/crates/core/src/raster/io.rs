//! PNG/JPEG encoding for images, focus maps and soft maps.
//!
//! Images decode to `[0, 1]` by dividing 8-bit samples by 255 and encode with
//! `round(v * 255)` clamped to the byte range.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{FocusMap, Image, SoftMap};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit image. Grayscale files stay single-channel, everything else becomes RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let is_gray = matches!(
        img.color(),
        image::ColorType::L8
            | image::ColorType::L16
            | image::ColorType::La8
            | image::ColorType::La16
    );
    if is_gray {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        let data = g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Image::new(h as usize, w as usize, 1, data)
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let (w, h) = (w as usize, h as usize);
        let raw = rgb.into_raw();
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f64 / 255.0;
            }
        }
        Image::new(h, w, 3, data)
    }
}

/// Writes an 8-bit PNG or JPEG, chosen by file extension; parent directories are created.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let n = img.height() * img.width();
    let res = if img.channels() == 1 {
        let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path)
    } else {
        let mut raw = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                raw.push(to_u8(img.data()[c * n + i]));
            }
        }
        ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
            .expect("sized buffer")
            .save(path)
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn png_writer(
    path: &Path,
    w: usize,
    h: usize,
    depth: png::BitDepth,
) -> Result<png::Writer<BufWriter<File>>> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    Ok(enc.write_header()?)
}

/// Writes a focus map as a 1-bit grayscale PNG.
pub fn save_focus_map(map: &FocusMap, path: &Path) -> Result<()> {
    let (h, w) = (map.height(), map.width());
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if map.get(y, x) == 1 {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut writer = png_writer(path, w, h, png::BitDepth::One)?;
    writer.write_image_data(&packed)?;
    writer.finish()?;
    Ok(())
}

/// Reads a focus map; any nonzero sample is foreground.
pub fn load_focus_map(path: &Path) -> Result<FocusMap> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    FocusMap::new(
        h as usize,
        w as usize,
        g.into_raw().into_iter().map(|v| (v != 0) as u8).collect(),
    )
}

/// Writes a soft map as a 16-bit grayscale PNG.
pub fn save_soft_map(map: &SoftMap, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(map.data().len() * 2);
    for &v in map.data() {
        let q = (v * 65535.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    let mut writer = png_writer(path, map.width(), map.height(), png::BitDepth::Sixteen)?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Raw label values of a segmentation mask and whether they are palette indices.
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub indexed: bool,
}

/// Reads a segmentation mask without resolving palettes, so indexed PNGs keep
/// their class ids. Non-indexed files fall back to 8-bit luminance.
pub fn load_label_mask(path: &Path) -> Result<LabelMask> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = png::Decoder::new(std::io::BufReader::new(file));
        dec.set_transformations(png::Transformations::IDENTITY);
        if let Ok(mut reader) = dec.read_info() {
            let info = reader.info();
            if info.color_type == png::ColorType::Indexed && info.bit_depth == png::BitDepth::Eight
            {
                let (w, h) = (info.width as usize, info.height as usize);
                let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h)];
                let frame = reader
                    .next_frame(&mut buf)
                    .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
                let mut labels = Vec::with_capacity(w * h);
                for y in 0..h {
                    labels.extend_from_slice(&buf[y * frame.line_size..y * frame.line_size + w]);
                }
                return Ok(LabelMask {
                    height: h,
                    width: w,
                    labels,
                    indexed: true,
                });
            }
        }
    }
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    Ok(LabelMask {
        height: h as usize,
        width: w as usize,
        labels: g.into_raw(),
        indexed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focus_map_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let m = FocusMap::from_fn(5, 13, |y, x| (x + y) % 3 == 0);
        save_focus_map(&m, &p).unwrap();
        assert_eq!(load_focus_map(&p).unwrap(), m);
    }

    #[test]
    fn image_png_roundtrip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        let data: Vec<f64> = (0..3 * 4 * 5)
            .map(|i| ((i * 37) % 256) as f64 / 255.0)
            .collect();
        let img = Image::new(4, 5, 3, data).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn soft_map_is_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        save_soft_map(&SoftMap::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap(), &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!(img.color(), image::ColorType::L16);
        assert_eq!(img.to_luma16().into_raw(), vec![0, 16384, 32768, 65535]);
    }
}
