//! Structure-preservation indices: Yang's SSIM-based index, the gradient
//! (edge-transfer) index, the two-level Haar index and the Chen–Blum index.

use std::f64::consts::FRAC_PI_2;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Plane;
use crate::raster::{gaussian_blur_plane, GaussianKernel};

pub const WINDOW: usize = 7;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
/// SSIM(A,B) above which the window is treated as redundant and sources are
/// weighted by local variance.
const YANG_SIMILARITY: f64 = 0.75;

/// Sums of every `k × k` window at valid positions (`(h−k+1) × (w−k+1)`).
fn box_sums(data: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let r = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = r[x..x + k].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|d| rows[(y + d) * ow + x]).sum();
        }
    }
    out
}

struct WindowStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn window_stats(p: &Plane, k: usize) -> WindowStats {
    let n = (k * k) as f64;
    let sq: Vec<f64> = p.data.iter().map(|v| v * v).collect();
    let s = box_sums(&p.data, p.h, p.w, k);
    let s2 = box_sums(&sq, p.h, p.w, k);
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let var = s2.iter().zip(&mean).map(|(v, m)| v / n - m * m).collect();
    WindowStats { mean, var }
}

fn window_cov(x: &Plane, y: &Plane, sx: &WindowStats, sy: &WindowStats, k: usize) -> Vec<f64> {
    let n = (k * k) as f64;
    let prod: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    box_sums(&prod, x.h, x.w, k)
        .iter()
        .zip(sx.mean.iter().zip(&sy.mean))
        .map(|(s, (mx, my))| s / n - mx * my)
        .collect()
}

fn ssim(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Per-window SSIM map over valid `k × k` windows.
fn ssim_map(x: &Plane, y: &Plane, sx: &WindowStats, sy: &WindowStats, k: usize) -> Vec<f64> {
    let cov = window_cov(x, y, sx, sy, k);
    (0..cov.len())
        .map(|i| ssim(sx.mean[i], sy.mean[i], sx.var[i], sy.var[i], cov[i]))
        .collect()
}

/// Yang's index: variance-weighted SSIM to the fused image where the sources
/// agree, otherwise the better of the two SSIMs; averaged over 7×7 windows.
pub fn q_yang(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let k = WINDOW;
    let (sa, sb, sf) = (window_stats(a, k), window_stats(b, k), window_stats(f, k));
    let ab = ssim_map(a, b, &sa, &sb, k);
    let af = ssim_map(a, f, &sa, &sf, k);
    let bf = ssim_map(b, f, &sb, &sf, k);
    let total: f64 = (0..ab.len())
        .map(|i| {
            if ab[i] >= YANG_SIMILARITY {
                let (va, vb) = (sa.var[i].max(0.0), sb.var[i].max(0.0));
                let den = va + vb;
                if den > 0.0 {
                    (va * af[i] + vb * bf[i]) / den
                } else {
                    (af[i] + bf[i]) / 2.0
                }
            } else {
                af[i].max(bf[i])
            }
        })
        .sum();
    (total / ab.len() as f64).clamp(0.0, 1.0)
}

/// Sobel responses (horizontal, vertical) with replicated borders.
fn sobel(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (p.h as isize, p.w as isize);
    let at = |y: isize, x: isize| p.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut gx = Vec::with_capacity(p.data.len());
    let mut gy = Vec::with_capacity(p.data.len());
    for y in 0..h {
        for x in 0..w {
            gx.push(
                (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1)),
            );
            gy.push(
                (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1)),
            );
        }
    }
    (gx, gy)
}

fn strength_orientation(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (gx, gy) = sobel(p);
    let g = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let a = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| {
            if x == 0.0 {
                if y == 0.0 {
                    0.0
                } else {
                    FRAC_PI_2.copysign(y)
                }
            } else {
                (y / x).atan()
            }
        })
        .collect();
    (g, a)
}

const QG_KAPPA_G: f64 = -15.0;
const QG_SIGMA_G: f64 = 0.5;
const QG_KAPPA_A: f64 = -22.0;
const QG_SIGMA_A: f64 = 0.8;

fn sigmoid_preservation(v: f64, kappa: f64, sigma: f64) -> f64 {
    // Gain chosen so that perfect preservation (v = 1) scores exactly 1.
    let gain = 1.0 + (kappa * (1.0 - sigma)).exp();
    gain / (1.0 + (kappa * (v - sigma)).exp())
}

/// Edge-preservation of source `s` in `f` at one pixel.
fn edge_preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    let g = if gs == gf {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let o = 1.0 - (as_ - af).abs() / FRAC_PI_2;
    sigmoid_preservation(g, QG_KAPPA_G, QG_SIGMA_G)
        * sigmoid_preservation(o, QG_KAPPA_A, QG_SIGMA_A)
}

/// Gradient-based index: edge preservation from each source weighted by the
/// source edge strength.
pub fn q_gradient(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let (ga, aa) = strength_orientation(a);
    let (gb, ab) = strength_orientation(b);
    let (gf, af) = strength_orientation(f);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..ga.len() {
        let qa = edge_preservation(ga[i], aa[i], gf[i], af[i]);
        let qb = edge_preservation(gb[i], ab[i], gf[i], af[i]);
        num += qa * ga[i] + qb * gb[i];
        den += ga[i] + gb[i];
    }
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// One orthonormal Haar level: (LL, [LH, HL, HH]) on the even-cropped plane.
fn haar_level(p: &Plane) -> (Plane, [Vec<f64>; 3]) {
    let (h2, w2) = (p.h / 2, p.w / 2);
    let mut ll = Vec::with_capacity(h2 * w2);
    let mut bands = [
        Vec::with_capacity(h2 * w2),
        Vec::with_capacity(h2 * w2),
        Vec::with_capacity(h2 * w2),
    ];
    for y in 0..h2 {
        for x in 0..w2 {
            let v = |dy: usize, dx: usize| p.data[(2 * y + dy) * p.w + 2 * x + dx];
            let (a, b, c, d) = (v(0, 0), v(0, 1), v(1, 0), v(1, 1));
            ll.push((a + b + c + d) / 2.0);
            bands[0].push((a + b - c - d) / 2.0);
            bands[1].push((a - b + c - d) / 2.0);
            bands[2].push((a - b - c + d) / 2.0);
        }
    }
    (
        Plane {
            h: h2,
            w: w2,
            data: ll,
        },
        bands,
    )
}

pub const QM_LEVELS: usize = 2;

/// Multiscale index: per-level detail-band similarity weighted by source
/// detail energy, multiplied over two Haar levels.
pub fn q_multiscale(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let (mut a, mut b, mut f) = (a.clone(), b.clone(), f.clone());
    let mut q = 1.0;
    for _ in 0..QM_LEVELS {
        if a.h < 2 || a.w < 2 {
            break;
        }
        let (la, da) = haar_level(&a);
        let (lb, db) = haar_level(&b);
        let (lf, df) = haar_level(&f);
        let ep = |ds: &[Vec<f64>; 3], i: usize| {
            (0..3)
                .map(|k| (-(df[k][i] - ds[k][i]).abs()).exp())
                .sum::<f64>()
                / 3.0
        };
        let energy =
            |ds: &[Vec<f64>; 3], i: usize| (0..3).map(|k| ds[k][i] * ds[k][i]).sum::<f64>();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..la.data.len() {
            let (wa, wb) = (energy(&da, i), energy(&db, i));
            num += ep(&da, i) * wa + ep(&db, i) * wb;
            den += wa + wb;
        }
        q *= if den > 0.0 { num / den } else { 1.0 };
        (a, b, f) = (la, lb, lf);
    }
    q.clamp(0.0, 1.0)
}

// Chen–Blum parameters: contrast sensitivity filter, masking exponents.
const CB_P: f64 = 3.0;
const CB_Q: f64 = 2.0;
const CB_Z: f64 = 1e-4;
const CB_SIGMA_NARROW: f64 = 2.0;
const CB_SIGMA_WIDE: f64 = 4.0;

fn signed_frequency(k: usize, n: usize) -> f64 {
    let s = if k <= (n - 1) / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    s * 2.0 / n as f64
}

/// Mannos–Sakrison contrast sensitivity filtering in the frequency domain.
fn csf_filter(p: &Plane, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let (h, w) = (p.h, p.w);
    let mut buf: Vec<Complex<f64>> = p.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fwd = planner.plan_fft_forward(w);
    let col_fwd = planner.plan_fft_forward(h);
    let row_inv = planner.plan_fft_inverse(w);
    let col_inv = planner.plan_fft_inverse(h);
    let columns = |buf: &mut Vec<Complex<f64>>, plan: &dyn rustfft::Fft<f64>| {
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            plan.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
    };
    for row in buf.chunks_mut(w) {
        row_fwd.process(row);
    }
    columns(&mut buf, col_fwd.as_ref());
    for y in 0..h {
        let v = h as f64 / 8.0 * signed_frequency(y, h);
        for x in 0..w {
            let u = w as f64 / 8.0 * signed_frequency(x, w);
            let r = u.hypot(v);
            let s = 2.6 * (0.0192 + 0.144 * r) * (-(0.144 * r).powf(1.1)).exp();
            buf[y * w + x] *= s;
        }
    }
    for row in buf.chunks_mut(w) {
        row_inv.process(row);
    }
    columns(&mut buf, col_inv.as_ref());
    let norm = (h * w) as f64;
    buf.iter().map(|c| c.re / norm).collect()
}

/// Masked local band-pass contrast of a CSF-filtered plane.
fn masked_contrast(filtered: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k1 = GaussianKernel::new(CB_SIGMA_NARROW).expect("positive sigma");
    let k2 = GaussianKernel::new(CB_SIGMA_WIDE).expect("positive sigma");
    let n1 = gaussian_blur_plane(filtered, h, w, &k1);
    let n2 = gaussian_blur_plane(filtered, h, w, &k2);
    n1.iter()
        .zip(&n2)
        .map(|(&a, &b)| {
            let c = if b != 0.0 { (a / b - 1.0).abs() } else { 0.0 };
            c.powf(CB_P) / (c.powf(CB_Q) + CB_Z)
        })
        .collect()
}

fn preservation_ratio(s: f64, f: f64) -> f64 {
    if s == f {
        1.0
    } else if s < f {
        s / f
    } else {
        f / s
    }
}

/// Chen–Blum perceptual index: contrast preservation from each source
/// weighted by squared source saliency.
pub fn q_chen_blum(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let mut planner = FftPlanner::new();
    let (h, w) = (a.h, a.w);
    let ca = masked_contrast(&csf_filter(a, &mut planner), h, w);
    let cb = masked_contrast(&csf_filter(b, &mut planner), h, w);
    let cf = masked_contrast(&csf_filter(f, &mut planner), h, w);
    let total: f64 = (0..ca.len())
        .map(|i| {
            let (qa, qb) = (
                preservation_ratio(ca[i], cf[i]),
                preservation_ratio(cb[i], cf[i]),
            );
            let (wa, wb) = (ca[i] * ca[i], cb[i] * cb[i]);
            let den = wa + wb;
            if den > 0.0 {
                (wa * qa + wb * qb) / den
            } else {
                (qa + qb) / 2.0
            }
        })
        .sum();
    (total / ca.len() as f64).clamp(0.0, 1.0)
}
