//! Indices of a single image (gradient, spread, fuzziness) and the ratio of
//! spatial-frequency error against the sources.

use std::f64::consts::FRAC_1_SQRT_2;

use super::Plane;

/// Mean of `sqrt((Δx² + Δy²)/2)` with forward differences over the pixels
/// that have both a right and a lower neighbour (gray levels 0–255).
pub fn average_gradient(p: &Plane) -> f64 {
    if p.h < 2 || p.w < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for y in 0..p.h - 1 {
        for x in 0..p.w - 1 {
            let v = p.at(y, x);
            let dx = p.at(y, x + 1) - v;
            let dy = p.at(y + 1, x) - v;
            s += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    s / ((p.h - 1) * (p.w - 1)) as f64
}

/// Mean squared deviation from the image mean, on intensities in [0, 1].
pub fn mean_squared_deviation(p: &Plane) -> f64 {
    let n = p.data.len() as f64;
    // Deviations are taken around the first pixel before centering, which is
    // exact for constant planes and better conditioned in general.
    let shift = p.data.first().copied().unwrap_or(0.0);
    let mean = p.data.iter().map(|v| v - shift).sum::<f64>() / n;
    p.data
        .iter()
        .map(|v| ((v - shift - mean) / 255.0).powi(2))
        .sum::<f64>()
        / n
}

/// Mean over interior pixels of the summed absolute difference to the four
/// neighbours (gray levels 0–255).
pub fn gray_level_difference(p: &Plane) -> f64 {
    if p.h < 3 || p.w < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for y in 1..p.h - 1 {
        for x in 1..p.w - 1 {
            let v = p.at(y, x);
            s += (v - p.at(y - 1, x)).abs()
                + (v - p.at(y + 1, x)).abs()
                + (v - p.at(y, x - 1)).abs()
                + (v - p.at(y, x + 1)).abs();
        }
    }
    s / ((p.h - 2) * (p.w - 2)) as f64
}

/// Linear index of fuzziness `(2/N)·Σ min(μ, 1−μ)` with min/max membership
/// `μ = (x − min)/(max − min)`; 0 for a constant image.
pub fn linear_index_of_fuzziness(p: &Plane) -> f64 {
    let (lo, hi) = p
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if hi <= lo {
        return 0.0;
    }
    let n = p.data.len() as f64;
    let s: f64 = p
        .data
        .iter()
        .map(|&v| {
            let mu = (v - lo) / (hi - lo);
            mu.min(1.0 - mu)
        })
        .sum();
    (2.0 * s / n).clamp(0.0, 1.0)
}

/// The four directional first differences (row, column, main diagonal,
/// secondary diagonal) at pixel `(y, x)`, zero where a neighbour is missing.
fn directional(p: &Plane, y: usize, x: usize) -> [f64; 4] {
    let v = p.at(y, x);
    [
        if x > 0 { v - p.at(y, x - 1) } else { 0.0 },
        if y > 0 { v - p.at(y - 1, x) } else { 0.0 },
        if y > 0 && x > 0 {
            v - p.at(y - 1, x - 1)
        } else {
            0.0
        },
        if y > 0 && x + 1 < p.w {
            v - p.at(y - 1, x + 1)
        } else {
            0.0
        },
    ]
}

/// Spatial frequency from per-direction sums of squared differences; the
/// diagonals carry weight `1/√2`.
fn spatial_frequency(sums: [f64; 4], n: f64) -> f64 {
    (sums[0] / n + sums[1] / n + FRAC_1_SQRT_2 * sums[2] / n + FRAC_1_SQRT_2 * sums[3] / n).sqrt()
}

/// Ratio of spatial-frequency error `(SF_F − SF_R)/SF_R`, where the reference
/// takes, per pixel and direction, the larger absolute source difference.
pub fn spatial_frequency_error(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let mut sf = [0.0; 4];
    let mut sr = [0.0; 4];
    for y in 0..f.h {
        for x in 0..f.w {
            let (da, db, df) = (
                directional(a, y, x),
                directional(b, y, x),
                directional(f, y, x),
            );
            for k in 0..4 {
                let r = da[k].abs().max(db[k].abs());
                sr[k] += r * r;
                sf[k] += df[k] * df[k];
            }
        }
    }
    let n = f.data.len() as f64;
    let (fused, reference) = (spatial_frequency(sf, n), spatial_frequency(sr, n));
    if reference > 0.0 {
        (fused - reference) / reference
    } else if fused == 0.0 {
        0.0
    } else {
        1.0
    }
}
