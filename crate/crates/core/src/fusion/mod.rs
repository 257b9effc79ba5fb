//! Inference: soft map → binary map → small-region refinement → compositing.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Checkpoint, Generator};
use crate::raster::{label_value, Connectivity, FocusMap, Image, SoftMap};

/// `1` where the value is at least `threshold` (ties go to the foreground).
pub fn binarize(map: &SoftMap, threshold: f64) -> FocusMap {
    let data = map
        .data()
        .iter()
        .map(|&v| u8::from(v >= threshold))
        .collect();
    FocusMap::new(map.height(), map.width(), data).expect("dimensions come from the soft map")
}

/// Area threshold `floor(0.001 · W · H)` for a `width × height` map.
pub fn srr_threshold(width: usize, height: usize) -> usize {
    width * height / 1000
}

/// Removes small regions with the default area threshold, filling small holes as well.
pub fn small_region_removal(map: &FocusMap, width: usize, height: usize) -> FocusMap {
    remove_small_regions(map, srr_threshold(width, height), true)
}

/// Flips every 8-connected foreground component with fewer than `n` pixels to
/// background, then (if `fill_holes`) every 8-connected background component
/// with fewer than `n` pixels to foreground.
pub fn remove_small_regions(map: &FocusMap, n: usize, fill_holes: bool) -> FocusMap {
    let mut out = flip_small(map, 1, n);
    if fill_holes {
        out = flip_small(&out, 0, n);
    }
    out
}

fn flip_small(map: &FocusMap, value: u8, n: usize) -> FocusMap {
    let lab = label_value(map, value, Connectivity::Eight);
    let data = map
        .data()
        .iter()
        .zip(&lab.labels)
        .map(|(&v, &l)| {
            if l != 0 && lab.counts[l as usize] < n {
                1 - value
            } else {
                v
            }
        })
        .collect();
    FocusMap::new(map.height(), map.width(), data).expect("same dimensions")
}

/// `A·F + B·(1−F)` for a binary `F`: each pixel is copied from exactly one source.
pub fn fuse(a: &Image, b: &Image, map: &FocusMap) -> Result<Image> {
    a.check_same_shape(b, "fusion sources differ")?;
    map.check_matches(a, "focus map does not match sources")?;
    let hw = a.height() * a.width();
    let mut data = Vec::with_capacity(a.data().len());
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        data.extend((0..hw).map(|i| if map.data()[i] == 1 { pa[i] } else { pb[i] }));
    }
    Image::new(a.height(), a.width(), a.channels(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionOptions {
    pub threshold: f64,
    /// Apply small-region removal after binarization.
    pub srr: bool,
    /// Also fill small background holes during small-region removal.
    pub fill_holes: bool,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            srr: true,
            fill_holes: true,
        }
    }
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub map_generation: f64,
    pub post_processing: f64,
    pub fusion: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub fused: Image,
    pub focus_map_raw: SoftMap,
    pub focus_map_final: FocusMap,
    pub timing: StageTiming,
}

/// Grayscale sources are tripled; sizes are reflect-padded to a multiple of 4
/// (at least 8) for the generator, and the map is cropped back.
pub fn fuse_pair_end_to_end(
    a: &Image,
    b: &Image,
    generator: &Generator,
    opts: &FusionOptions,
) -> Result<FusionResult> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {} must lie in (0, 1)",
            opts.threshold
        )));
    }
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(format!(
            "source sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let start = Instant::now();
    let (h, w) = (a.height(), a.width());
    let (a, b) = (a.to_rgb(), b.to_rgb());
    let pad = |n: usize| n.div_ceil(4).max(2) * 4;
    let (ph, pw) = (pad(h), pad(w));
    let raw = if (ph, pw) == (h, w) {
        generator.infer(&a, &b)?
    } else {
        generator
            .infer(&a.pad_reflect(ph, pw), &b.pad_reflect(ph, pw))?
            .crop(h, w)
    };
    let t_map = Instant::now();
    let mut map = binarize(&raw, opts.threshold);
    if opts.srr {
        map = remove_small_regions(&map, srr_threshold(w, h), opts.fill_holes);
    }
    let t_post = Instant::now();
    let fused = fuse(&a, &b, &map)?;
    let t_fuse = Instant::now();
    Ok(FusionResult {
        fused,
        focus_map_raw: raw,
        focus_map_final: map,
        timing: StageTiming {
            map_generation: (t_map - start).as_secs_f64(),
            post_processing: (t_post - t_map).as_secs_f64(),
            fusion: (t_fuse - t_post).as_secs_f64(),
            total: start.elapsed().as_secs_f64(),
        },
    })
}

pub fn load_generator(checkpoint: &Path) -> Result<Generator> {
    Checkpoint::load(checkpoint)?.generator()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_strategy(max: usize) -> impl Strategy<Value = FocusMap> {
        (1..=max, 1..=max).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |d| FocusMap::new(h, w, d).unwrap())
        })
    }

    /// Flood fill with an explicit stack; counts component sizes directly.
    fn oracle_flip(map: &FocusMap, value: u8, n: usize) -> FocusMap {
        let (h, w) = (map.height(), map.width());
        let mut seen = vec![false; h * w];
        let mut out = map.clone();
        for start in 0..h * w {
            if seen[start] || map.data()[start] != value {
                continue;
            }
            let mut comp = vec![start];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if !seen[q] && map.data()[q] == value {
                            seen[q] = true;
                            comp.push(q);
                            stack.push(q);
                        }
                    }
                }
            }
            if comp.len() < n {
                for q in comp {
                    out.set(q / w, q % w, value == 0);
                }
            }
        }
        out
    }

    #[test]
    fn binarize_examples() {
        let m = SoftMap::new(1, 3, vec![0.9, 0.1, 0.5]).unwrap();
        assert_eq!(binarize(&m, 0.5).data(), &[1, 0, 1]);
    }

    #[test]
    fn threshold_matches_formula() {
        assert_eq!(srr_threshold(520, 520), 270);
        assert_eq!(srr_threshold(32, 32), 1);
        assert_eq!(srr_threshold(31, 32), 0);
    }

    #[test]
    fn large_component_is_kept() {
        let m = FocusMap::from_fn(40, 40, |y, x| (5..25).contains(&y) && (5..25).contains(&x));
        assert_eq!(remove_small_regions(&m, 400, true), m);
        let cleared = remove_small_regions(&m, 401, false);
        assert_eq!(cleared.foreground_count(), 0);
    }

    #[test]
    fn fuse_collapses() {
        let a = Image::filled(2, 2, 3, 0.25).unwrap();
        let b = Image::filled(2, 2, 3, 0.75).unwrap();
        assert_eq!(fuse(&a, &b, &FocusMap::ones(2, 2)).unwrap(), a);
        assert_eq!(fuse(&a, &b, &FocusMap::zeros(2, 2)).unwrap(), b);
        assert!(fuse(&a, &b, &FocusMap::zeros(3, 2)).is_err());
    }

    proptest! {
        #[test]
        fn srr_matches_oracle(m in mask_strategy(32), n in prop::sample::select(vec![1usize, 3, 10])) {
            let want = oracle_flip(&oracle_flip(&m, 1, n), 0, n);
            let got = remove_small_regions(&m, n, true);
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(remove_small_regions(&got, n, true), got);
        }

        #[test]
        fn fused_pixels_come_from_a_source(
            m in mask_strategy(12),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (m.height(), m.width());
            let mut img = || Image::new(h, w, 3, (0..3 * h * w).map(|_| rng.gen()).collect()).unwrap();
            let (a, b) = (img(), img());
            let f = fuse(&a, &b, &m).unwrap();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let want = if m.get(y, x) == 1 { a.get(c, y, x) } else { b.get(c, y, x) };
                        // Exactly the arithmetic form A·F + B·(1−F) for binary F.
                        let f_val = m.get(y, x) as f64;
                        prop_assert_eq!(a.get(c, y, x) * f_val + b.get(c, y, x) * (1.0 - f_val), want);
                        prop_assert_eq!(f.get(c, y, x), want);
                    }
                }
            }
        }
    }
}
