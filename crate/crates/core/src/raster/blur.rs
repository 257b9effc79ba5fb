use super::{reflect_index, Image};
use crate::error::{Error, Result};

/// Normalized, truncated 1-D Gaussian. The 2-D filter is its outer product.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// `sigma = 0` degenerates to the unit impulse.
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!(
                "gaussian sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(Self {
                sigma,
                radius: 0,
                weights: vec![1.0],
            });
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let denom = 2.0 * sigma * sigma;
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / denom).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            sigma,
            radius,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }
}

/// Separable Gaussian blur of one `height×width` plane with reflected borders.
pub fn gaussian_blur_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    kernel: &GaussianKernel,
) -> Vec<f64> {
    if kernel.radius == 0 {
        return plane.to_vec();
    }
    let r = kernel.radius as isize;
    let w = &kernel.weights;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * row[reflect_index(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for (k, wk) in w.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, height);
            let src = &tmp[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Per-channel Gaussian blur; the output has the input's shape.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = GaussianKernel::new(sigma)?;
    Ok(img.map_planes(|p| gaussian_blur_plane(p, img.height(), img.width(), &kernel)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_is_normalized_and_odd() {
        for sigma in [0.3, 1.0, 2.5, 5.0] {
            let k = GaussianKernel::new(sigma).unwrap();
            assert_eq!(k.radius(), (3.0 * sigma).ceil() as usize);
            assert_eq!(k.width() % 2, 1);
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(k.weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(GaussianKernel::new(f64::NAN).is_err());
        assert!(GaussianKernel::new(f64::INFINITY).is_err());
        assert!(GaussianKernel::new(-1.0).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::new(2, 2, 1, vec![0.1, 0.9, 0.4, 0.0]).unwrap();
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn impulse_reproduces_2d_taps() {
        let mut data = vec![0.0; 49];
        data[24] = 1.0;
        let img = Image::new(7, 7, 1, data).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        // oracle: 2-D Gaussian evaluated directly and normalized over the 7x7 support
        let mut taps = vec![0.0; 49];
        for y in 0..7 {
            for x in 0..7 {
                let (dy, dx) = (y as f64 - 3.0, x as f64 - 3.0);
                taps[y * 7 + x] = (-(dx * dx + dy * dy) / 2.0).exp();
            }
        }
        let total: f64 = taps.iter().sum();
        for (o, t) in out.data().iter().zip(&taps) {
            assert!((o - t / total).abs() < 1e-12, "{o} vs {}", t / total);
        }
    }

    proptest! {
        #[test]
        fn constant_is_fixed_point(c in 0.0f64..=1.0, sigma in 0.0f64..6.0, h in 1usize..12, w in 1usize..12) {
            let img = Image::filled(h, w, 3, c).unwrap();
            let out = gaussian_blur(&img, sigma).unwrap();
            for v in out.data() {
                prop_assert!((v - c).abs() < 1e-9);
            }
        }

        #[test]
        fn blur_stays_within_input_range(
            data in proptest::collection::vec(0.0f64..=1.0, 64),
            sigma in 0.1f64..4.0,
        ) {
            let img = Image::new(8, 8, 1, data.clone()).unwrap();
            let out = gaussian_blur(&img, sigma).unwrap();
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out.data() {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }
}
