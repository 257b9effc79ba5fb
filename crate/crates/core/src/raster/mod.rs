//! Raster primitives shared by the whole pipeline.
//!
//! Images are stored channel-planar (`C×H×W`, row-major inside a plane) with
//! values in `[0, 1]`. Focus maps are binary `H×W` masks where `1` marks the
//! focused foreground of source A.

mod blur;
mod components;
pub mod io;
mod morphology;

pub use blur::{gaussian_blur, gaussian_blur_plane, GaussianKernel};
pub(crate) use components::label_value;
pub use components::{connected_components, Connectivity, Labeling};
pub use morphology::{dilate, erode, morph};

use crate::error::{Error, Result};

/// Floating-point raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    /// Grayscale images are replicated into three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Luminance `Y = 0.299 R + 0.587 G + 0.114 B`, single-channel input passes through.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
            .collect()
    }

    pub fn map_planes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            data.extend(f(self.plane(c)));
        }
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Reflect-pads to the given size (bottom and right edges only).
    pub fn pad_reflect(&self, height: usize, width: usize) -> Image {
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..height {
                let sy = reflect_index(y as isize, self.height);
                for x in 0..width {
                    let sx = reflect_index(x as isize, self.width);
                    data.push(plane[sy * self.width + sx]);
                }
            }
        }
        Image {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::invalid("crop window exceeds image bounds"));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + height {
                data.extend_from_slice(
                    &plane[y * self.width + left..y * self.width + left + width],
                );
            }
        }
        Ok(Image {
            height,
            width,
            channels: self.channels,
            data,
        })
    }
}

/// Binary focus map, `1` = focused foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FocusMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl FocusMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for {height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("focus map values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn complement(&self) -> FocusMap {
        FocusMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn as_reals(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.height == img.height() && self.width == img.width()
    }

    pub(crate) fn check_matches(&self, img: &Image, what: &str) -> Result<()> {
        if self.matches(img) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: map {}x{} vs image {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )))
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<FocusMap> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::invalid("crop window exceeds map bounds"));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            data.extend_from_slice(
                &self.data[y * self.width + left..y * self.width + left + width],
            );
        }
        Ok(FocusMap {
            height,
            width,
            data,
        })
    }

    /// Intersection over union against another map of the same size.
    pub fn iou(&self, other: &FocusMap) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Real-valued generator output in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SoftMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn crop(&self, height: usize, width: usize) -> SoftMap {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        SoftMap {
            height,
            width,
            data,
        }
    }
}

/// Half-sample symmetric reflection (`c b a | a b c | c b a`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_symmetric() {
        assert_eq!(reflect_index(-1, 4), 0);
        assert_eq!(reflect_index(-2, 4), 1);
        assert_eq!(reflect_index(4, 4), 3);
        assert_eq!(reflect_index(5, 4), 2);
        assert_eq!(reflect_index(9, 1), 0);
        assert_eq!(reflect_index(-7, 3), 0);
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn focus_map_rejects_non_binary() {
        assert!(FocusMap::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn iou_counts() {
        let a = FocusMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let b = FocusMap::new(1, 4, vec![0, 1, 1, 0]).unwrap();
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(FocusMap::zeros(2, 2).iou(&FocusMap::zeros(2, 2)), 1.0);
    }

    #[test]
    fn pad_then_crop_roundtrip() {
        let img = Image::new(2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let padded = img.pad_reflect(4, 4);
        assert_eq!(padded.get(0, 3, 3), img.get(0, 0, 2));
        assert_eq!(padded.crop(0, 0, 2, 3).unwrap(), img);
    }
}
