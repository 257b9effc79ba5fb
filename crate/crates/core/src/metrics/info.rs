//! Histogram-based indices: normalized mutual information, Tsallis
//! information and nonlinear correlation information entropy.

use super::Plane;

pub const BINS: usize = 256;
pub const TSALLIS_Q: f64 = 1.85;

fn quantize(p: &Plane) -> Vec<usize> {
    p.data
        .iter()
        .map(|&v| (v.round() as usize).min(BINS - 1))
        .collect()
}

struct Histograms {
    x: Vec<u32>,
    y: Vec<u32>,
    /// Non-zero joint counts in ascending order, so that sums do not depend
    /// on which image is the row variable.
    joint: Vec<u32>,
    n: f64,
}

fn histograms(x: &[usize], y: &[usize], bins: usize) -> Histograms {
    let mut hx = vec![0u32; bins];
    let mut hy = vec![0u32; bins];
    let mut hj = vec![0u32; bins * bins];
    for (&a, &b) in x.iter().zip(y) {
        hx[a] += 1;
        hy[b] += 1;
        hj[a * bins + b] += 1;
    }
    let mut joint: Vec<u32> = hj.into_iter().filter(|&c| c > 0).collect();
    joint.sort_unstable();
    Histograms {
        x: hx,
        y: hy,
        joint,
        n: x.len() as f64,
    }
}

/// Shannon entropy of a histogram in the given log base (`0·log 0 = 0`).
fn entropy(counts: &[u32], n: f64, base: f64) -> f64 {
    let mut sorted: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable();
    let h: f64 = sorted
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h / base.ln()
}

/// Tsallis entropy `(1 − Σ pᵠ)/(q − 1)` of a histogram.
fn tsallis(counts: &[u32], n: f64, q: f64) -> f64 {
    let mut sorted: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable();
    let s: f64 = sorted.iter().map(|&c| (c as f64 / n).powf(q)).sum();
    (1.0 - s) / (q - 1.0)
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// `2·[I(A;F)/(H(A)+H(F)) + I(B;F)/(H(B)+H(F))]` with 256-bin histograms.
pub fn mutual_information(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let (qa, qb, qf) = (quantize(a), quantize(b), quantize(f));
    let term = |qs: &[usize]| {
        let h = histograms(qs, &qf, BINS);
        let (hs, hf) = (entropy(&h.x, h.n, 2.0), entropy(&h.y, h.n, 2.0));
        let hj = entropy(&h.joint, h.n, 2.0);
        ratio_or_zero(hs + hf - hj, hs + hf).max(0.0)
    };
    2.0 * (term(&qa) + term(&qb))
}

/// Tsallis analogue of the normalized mutual information with order `q`,
/// using `I_q(X;Y) = H_q(X) + H_q(Y) − H_q(X,Y)`.
pub fn tsallis_information(a: &Plane, b: &Plane, f: &Plane, q: f64) -> f64 {
    let (qa, qb, qf) = (quantize(a), quantize(b), quantize(f));
    let term = |qs: &[usize]| {
        let h = histograms(qs, &qf, BINS);
        let (hs, hf) = (tsallis(&h.x, h.n, q), tsallis(&h.y, h.n, q));
        let hj = tsallis(&h.joint, h.n, q);
        ratio_or_zero(hs + hf - hj, hs + hf)
    };
    term(&qa) + term(&qb)
}

/// Equal-frequency bin index of every pixel (ties broken by position).
fn rank_bins(p: &Plane, bins: usize) -> Vec<usize> {
    let n = p.data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p.data[i].total_cmp(&p.data[j]).then(i.cmp(&j)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

/// Nonlinear correlation coefficient between two rank-binned images.
fn ncc(x: &[usize], y: &[usize], bins: usize) -> f64 {
    let h = histograms(x, y, bins);
    let base = bins as f64;
    entropy(&h.x, h.n, base) + entropy(&h.y, h.n, base) - entropy(&h.joint, h.n, base)
}

/// Eigenvalues of the symmetric matrix `[[1,x,y],[x,1,z],[y,z,1]]`, computed
/// from invariants that do not change when `y` and `z` are exchanged.
pub fn unit_diagonal_eigenvalues(x: f64, y: f64, z: f64) -> [f64; 3] {
    let p1 = x * x + (y * y + z * z);
    if p1 == 0.0 {
        return [1.0; 3];
    }
    let p = (p1 / 3.0).sqrt();
    // det(R − I) = 2xyz for a zero-diagonal symmetric matrix.
    let r = (x * (y * z) / (p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = 1.0 + 2.0 * p * phi.cos();
    let l3 = 1.0 + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [l1, 3.0 - l1 - l3, l3]
}

/// `1 + Σ (λᵢ/3)·log_b(λᵢ/3)` over the eigenvalues of the 3×3 nonlinear
/// correlation matrix, `b` the number of bins.
pub fn ncie_from_eigenvalues(eigs: [f64; 3], bins: usize) -> f64 {
    let base = (bins as f64).ln();
    1.0 + eigs
        .iter()
        .map(|&l| {
            let r = l.max(0.0) / 3.0;
            if r > 0.0 {
                r * r.ln() / base
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

pub fn ncie(a: &Plane, b: &Plane, f: &Plane) -> f64 {
    let bins = BINS.min(a.data.len()).max(2);
    let (ra, rb, rf) = (rank_bins(a, bins), rank_bins(b, bins), rank_bins(f, bins));
    let ab = ncc(&ra, &rb, bins);
    let af = ncc(&ra, &rf, bins);
    let bf = ncc(&rb, &rf, bins);
    ncie_from_eigenvalues(unit_diagonal_eigenvalues(ab, af, bf), bins).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        Plane {
            h,
            w,
            data: (0..h * w).map(|i| f(i / w, i % w)).collect(),
        }
    }

    /// Plain-loop MI oracle straight from the definition.
    fn oracle_term(x: &[f64], y: &[f64]) -> f64 {
        use std::collections::HashMap;
        let n = x.len() as f64;
        let mut px: HashMap<i64, f64> = HashMap::new();
        let mut py: HashMap<i64, f64> = HashMap::new();
        let mut pj: HashMap<(i64, i64), f64> = HashMap::new();
        for (&a, &b) in x.iter().zip(y) {
            let (a, b) = (a.round() as i64, b.round() as i64);
            *px.entry(a).or_default() += 1.0 / n;
            *py.entry(b).or_default() += 1.0 / n;
            *pj.entry((a, b)).or_default() += 1.0 / n;
        }
        let h = |m: &mut dyn Iterator<Item = f64>| -m.map(|p| p * p.log2()).sum::<f64>();
        let (hx, hy) = (h(&mut px.values().copied()), h(&mut py.values().copied()));
        let mi: f64 = pj
            .iter()
            .map(|(&(a, b), &p)| p * (p / (px[&a] * py[&b])).log2())
            .sum();
        mi / (hx + hy)
    }

    #[test]
    fn two_level_self_fusion_matches_histogram_oracle_and_is_maximal() {
        let img = plane(8, 8, |y, x| if (x + 2 * y) % 3 == 0 { 255.0 } else { 0.0 });
        let got = mutual_information(&img, &img, &img);
        let want = 2.0 * (oracle_term(&img.data, &img.data) * 2.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // I(X;X) = H(X), so each normalized term is ½ and the maximum is 2.
        assert!((got - 2.0).abs() < 1e-12);
        let other = plane(8, 8, |y, x| if (x + y) % 2 == 0 { 255.0 } else { 0.0 });
        assert!(mutual_information(&img, &img, &other) < got);
    }

    #[test]
    fn random_pair_matches_oracle() {
        let a = plane(16, 16, |y, x| ((y * 37 + x * 11) % 7) as f64 * 30.0);
        let b = plane(16, 16, |y, x| ((y * 5 + x * 3) % 4) as f64 * 60.0);
        let f = plane(16, 16, |y, x| ((y + x * 13) % 5) as f64 * 50.0);
        let want = 2.0 * (oracle_term(&a.data, &f.data) + oracle_term(&b.data, &f.data));
        assert!((mutual_information(&a, &b, &f) - want).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_has_near_zero_mi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut noise =
            || plane(64, 64, |_, _| 0.0).map_data(|_| if rng.gen::<bool>() { 255.0 } else { 0.0 });
        let (a, b, f) = (noise(), noise(), noise());
        assert!(mutual_information(&a, &b, &f) < 0.05);
    }

    #[test]
    fn ncie_of_identical_images_matches_closed_form() {
        let img = plane(16, 16, |y, x| ((y * 16 + x) * 7 % 256) as f64);
        let want = ncie_from_eigenvalues([3.0, 0.0, 0.0], 256);
        assert!((want - 1.0).abs() < 1e-15);
        assert!((ncie(&img, &img, &img) - want).abs() < 1e-9);
        let e = unit_diagonal_eigenvalues(1.0, 1.0, 1.0);
        assert!((e[0] - 3.0).abs() < 1e-12 && e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial() {
        let (x, y, z) = (0.3, -0.2, 0.6);
        let det = 1.0 + 2.0 * x * y * z - x * x - y * y - z * z;
        let e = unit_diagonal_eigenvalues(x, y, z);
        assert!((e.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!((e.iter().product::<f64>() - det).abs() < 1e-12);
    }

    #[test]
    fn degenerate_images_are_finite() {
        let c = plane(8, 8, |_, _| 100.0);
        for v in [
            mutual_information(&c, &c, &c),
            tsallis_information(&c, &c, &c, TSALLIS_Q),
            ncie(&c, &c, &c),
        ] {
            assert!(v.is_finite());
        }
        assert_eq!(mutual_information(&c, &c, &c), 0.0);
    }
}
