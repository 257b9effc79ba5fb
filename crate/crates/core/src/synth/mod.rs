//! Training-pair synthesis from an all-in-focus image and its focus map.
//!
//! Two models are provided. The alpha-matte model blurs each surface
//! separately and composites with a blurred matte on the far-focused side, so
//! a defocused foreground spills past its silhouette into the background. The
//! conventional model simply switches between the sharp and the blurred image
//! along the mask and has no such spill.

mod corpus;
pub mod procedural;

pub use corpus::{
    build_dataset, load_dataset, sample_paths, save_sample, write_manifest, ManifestRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur, FocusMap, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    #[default]
    AlphaMatte,
    Conventional,
}

impl SynthesisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthesisMode::AlphaMatte => "alpha_matte",
            SynthesisMode::Conventional => "conventional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub mode: SynthesisMode,
    pub sigma_range: [f64; 2],
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            mode: SynthesisMode::AlphaMatte,
            sigma_range: [2.0, 5.0],
            crop_size: 256,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sigma_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma range [{lo}, {hi}] must satisfy 0 < lo <= hi"
            )));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "crop size {} must be a positive multiple of 4",
                self.crop_size
            )));
        }
        Ok(())
    }
}

/// One synthesized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub source_a: Image,
    pub source_b: Image,
    pub focus_map: FocusMap,
    pub ground_truth: Image,
    pub sigma_used: f64,
}

/// Pixel-wise `(F·I, (1−F)·I)`, broadcast over channels.
pub fn split_layers(img: &Image, map: &FocusMap) -> Result<(Image, Image)> {
    map.check_matches(img, "split_layers")?;
    let f = map.as_reals();
    let fg = img.map_planes(|p| p.iter().zip(&f).map(|(v, m)| m * v).collect());
    let bg = img.map_planes(|p| p.iter().zip(&f).map(|(v, m)| (1.0 - m) * v).collect());
    Ok((fg, bg))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "defocus sigma must be finite and > 0, got {sigma}"
        )))
    }
}

/// Alpha-matte pair.
///
/// `I_A = F·I + (1−F)·blur((1−F)·I)` keeps the foreground sharp;
/// `I_B = blur(F·I) + (1 − blur(F))·((1−F)·I)` defocuses the foreground and
/// lets it spread over the sharp background through the blurred matte.
pub fn synthesize_alpha_pair(img: &Image, map: &FocusMap, sigma: f64) -> Result<(Image, Image)> {
    check_sigma(sigma)?;
    let (fg, bg) = split_layers(img, map)?;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let f = map.as_reals();
    let fg_blur = gaussian_blur(&fg, sigma)?;
    let bg_blur = gaussian_blur(&bg, sigma)?;
    let matte = gaussian_blur(&Image::new(h, w, 1, f.clone())?, sigma)?;
    let matte = matte.data();

    let n = h * w;
    let mut a = Vec::with_capacity(n * c);
    let mut b = Vec::with_capacity(n * c);
    for ch in 0..c {
        let (i, fb, bb, bc) = (
            img.plane(ch),
            fg_blur.plane(ch),
            bg_blur.plane(ch),
            bg.plane(ch),
        );
        for p in 0..n {
            a.push(f[p] * i[p] + (1.0 - f[p]) * bb[p]);
            b.push(fb[p] + (1.0 - matte[p]) * bc[p]);
        }
    }
    Ok((
        Image::from_clamped(h, w, c, a)?,
        Image::from_clamped(h, w, c, b)?,
    ))
}

/// Conventional pair: `I_A = F·I + (1−F)·blur(I)`, `I_B = F·blur(I) + (1−F)·I`.
pub fn synthesize_conventional_pair(
    img: &Image,
    map: &FocusMap,
    sigma: f64,
) -> Result<(Image, Image)> {
    check_sigma(sigma)?;
    map.check_matches(img, "synthesize_conventional_pair")?;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let f = map.as_reals();
    let blurred = gaussian_blur(img, sigma)?;
    let n = h * w;
    let mut a = Vec::with_capacity(n * c);
    let mut b = Vec::with_capacity(n * c);
    for ch in 0..c {
        let (i, bl) = (img.plane(ch), blurred.plane(ch));
        for p in 0..n {
            a.push(f[p] * i[p] + (1.0 - f[p]) * bl[p]);
            b.push(f[p] * bl[p] + (1.0 - f[p]) * i[p]);
        }
    }
    Ok((
        Image::from_clamped(h, w, c, a)?,
        Image::from_clamped(h, w, c, b)?,
    ))
}

pub fn synthesize_pair(
    mode: SynthesisMode,
    img: &Image,
    map: &FocusMap,
    sigma: f64,
) -> Result<(Image, Image)> {
    match mode {
        SynthesisMode::AlphaMatte => synthesize_alpha_pair(img, map, sigma),
        SynthesisMode::Conventional => synthesize_conventional_pair(img, map, sigma),
    }
}

pub fn make_sample(
    mode: SynthesisMode,
    img: Image,
    map: FocusMap,
    sigma: f64,
) -> Result<TrainingSample> {
    let (source_a, source_b) = synthesize_pair(mode, &img, &map, sigma)?;
    Ok(TrainingSample {
        source_a,
        source_b,
        focus_map: map,
        ground_truth: img,
        sigma_used: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
        Image::new(h, w, c, (0..h * w * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn disc(h: usize, w: usize, r: f64) -> FocusMap {
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        FocusMap::from_fn(h, w, |y, x| {
            ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() < r
        })
    }

    #[test]
    fn split_partitions_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 9, 7, 3);
        let ones = FocusMap::ones(9, 7);
        let (fg, bg) = split_layers(&img, &ones).unwrap();
        assert_eq!(fg, img);
        assert!(bg.data().iter().all(|&v| v == 0.0));
        let (fg, bg) = split_layers(&img, &FocusMap::zeros(9, 7)).unwrap();
        assert!(fg.data().iter().all(|&v| v == 0.0));
        assert_eq!(bg, img);
        let m = disc(9, 7, 2.5);
        let (fg, bg) = split_layers(&img, &m).unwrap();
        for ((a, b), i) in fg.data().iter().zip(bg.data()).zip(img.data()) {
            assert_eq!(a + b, *i);
        }
        assert!(split_layers(&img, &FocusMap::zeros(3, 3)).is_err());
    }

    #[test]
    fn alpha_all_foreground_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 16, 16, 3);
        let (a, b) = synthesize_alpha_pair(&img, &FocusMap::ones(16, 16), 2.0).unwrap();
        assert_eq!(a, img);
        let blurred = gaussian_blur(&img, 2.0).unwrap();
        for (x, y) in b.data().iter().zip(blurred.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_keeps_foreground_and_far_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 40, 40, 3);
        let m = disc(40, 40, 6.0);
        let sigma = 1.5;
        let (a, b) = synthesize_alpha_pair(&img, &m, sigma).unwrap();
        let reach = (3.0 * sigma).ceil() as isize;
        for y in 0..40 {
            for x in 0..40 {
                if m.get(y, x) == 1 {
                    for c in 0..3 {
                        assert_eq!(a.get(c, y, x), img.get(c, y, x));
                    }
                    continue;
                }
                // brute-force: no foreground pixel within the kernel support
                let mut near = false;
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if (0..40).contains(&yy)
                            && (0..40).contains(&xx)
                            && m.get(yy as usize, xx as usize) == 1
                        {
                            near = true;
                        }
                    }
                }
                if !near {
                    for c in 0..3 {
                        assert!((b.get(c, y, x) - img.get(c, y, x)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn conventional_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 20, 24, 3);
        let (a, b) = synthesize_conventional_pair(&img, &FocusMap::ones(20, 24), 3.0).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, gaussian_blur(&img, 3.0).unwrap());

        let m = disc(20, 24, 5.0);
        let (a, b) = synthesize_conventional_pair(&img, &m, 3.0).unwrap();
        let f = m.as_reals();
        for c in 0..3 {
            for (p, &fp) in f.iter().enumerate() {
                let v = fp * a.plane(c)[p] + (1.0 - fp) * b.plane(c)[p];
                assert_eq!(v, img.plane(c)[p]);
            }
        }
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 12, 12, 1);
        let m = disc(12, 12, 3.0);
        for mode in [SynthesisMode::AlphaMatte, SynthesisMode::Conventional] {
            let (a, b) = synthesize_pair(mode, &img, &m, 1e-3).unwrap();
            for ((x, y), i) in a.data().iter().zip(b.data()).zip(img.data()) {
                assert!((x - i).abs() < 1e-12 && (y - i).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let img = Image::filled(4, 4, 1, 0.5).unwrap();
        let m = FocusMap::zeros(4, 4);
        assert!(synthesize_alpha_pair(&img, &m, 0.0).is_err());
        assert!(synthesize_conventional_pair(&img, &m, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SynthesisConfig::default().validate().is_ok());
        let bad = SynthesisConfig {
            crop_size: 30,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthesisConfig {
            sigma_range: [3.0, 2.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
