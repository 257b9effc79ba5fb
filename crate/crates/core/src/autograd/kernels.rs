//! Numeric kernels shared by the autograd graph and the graph-free inference path.
//!
//! The three convolution kernels are the partial derivatives of the trilinear
//! form `T(x, w, y) = <y, conv(x, w)>`: `conv = ∂T/∂y`, `conv_data = ∂T/∂x`
//! (also the transposed convolution) and `conv_weight = ∂T/∂w`.

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Geometry of a 2-D convolution from an `in_h×in_w` input to an `out_h×out_w` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvSpec {
    pub fn conv(in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(
            in_h + 2 * pad >= kernel && in_w + 2 * pad >= kernel,
            "kernel larger than padded input"
        );
        Self {
            kernel,
            stride,
            pad,
            in_h,
            in_w,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        }
    }

    /// Geometry of the transposed convolution mapping `out_h×out_w` back up.
    pub fn transposed(
        out_h: usize,
        out_w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let in_h = (out_h - 1) * stride + kernel - 2 * pad;
        let in_w = (out_w - 1) * stride + kernel - 2 * pad;
        let spec = Self::conv(in_h, in_w, kernel, stride, pad);
        debug_assert_eq!((spec.out_h, spec.out_w), (out_h, out_w));
        spec
    }

    fn cols(&self, cin: usize) -> (usize, usize) {
        (cin * self.kernel * self.kernel, self.out_h * self.out_w)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kj − pad` is in bounds.
fn valid_range(spec: &ConvSpec, kj: usize) -> (usize, usize) {
    let (s, pad) = (spec.stride, spec.pad);
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(s) };
    let hi = if spec.in_w + pad > kj {
        ((spec.in_w + pad - kj - 1) / s + 1).min(spec.out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Patch-matrix elements targeted per row block, keeping the im2col buffer
/// cache-sized instead of materializing every output column at once.
const BLOCK_ELEMS: usize = 1 << 15;

/// Output-row blocks `[oy0, oy1)` covering the output in order.
fn row_blocks(spec: &ConvSpec, kdim: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (BLOCK_ELEMS / (kdim * spec.out_w).max(1)).max(1);
    let out_h = spec.out_h;
    (0..out_h)
        .step_by(rows)
        .map(move |r0| (r0, (r0 + rows).min(out_h)))
}

/// Output rows `[oy0, oy1)` of a `C×H×W` image as a `(C·k·k)×((oy1−oy0)·Wo)` patch matrix.
fn im2col(x: &[f64], cin: usize, spec: &ConvSpec, (oy0, oy1): (usize, usize), cols: &mut [f64]) {
    let k = spec.kernel;
    let p = (oy1 - oy0) * spec.out_w;
    for c in 0..cin {
        let plane = &x[c * spec.in_h * spec.in_w..(c + 1) * spec.in_h * spec.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * p..((c * k + ki) * k + kj + 1) * p];
                let (lo, hi) = valid_range(spec, kj);
                for oy in oy0..oy1 {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    let dst = &mut row[(oy - oy0) * spec.out_w..(oy - oy0 + 1) * spec.out_w];
                    if iy < 0 || iy >= spec.in_h as isize || lo == hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * spec.in_w..(iy as usize + 1) * spec.in_w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let start = lo * spec.stride + kj - spec.pad;
                    if spec.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, s) in dst[lo..hi]
                            .iter_mut()
                            .zip(src[start..].iter().step_by(spec.stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the patch columns of rows `[oy0, oy1)`
/// back into a `C×H×W` image.
fn col2im(cols: &[f64], cin: usize, spec: &ConvSpec, (oy0, oy1): (usize, usize), x: &mut [f64]) {
    let k = spec.kernel;
    let p = (oy1 - oy0) * spec.out_w;
    for c in 0..cin {
        let plane = &mut x[c * spec.in_h * spec.in_w..(c + 1) * spec.in_h * spec.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * p..((c * k + ki) * k + kj + 1) * p];
                let (lo, hi) = valid_range(spec, kj);
                if lo == hi {
                    continue;
                }
                let start = lo * spec.stride + kj - spec.pad;
                for oy in oy0..oy1 {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= spec.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * spec.in_w..(iy as usize + 1) * spec.in_w];
                    let o = (oy - oy0) * spec.out_w;
                    let src = &row[o + lo..o + hi];
                    for (d, s) in dst[start..].iter_mut().step_by(spec.stride).zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Output widths up to which stride-1 convolutions skip the patch matrix:
/// a GEMM with so few rows cannot amortize building it.
const DIRECT_MAX_COUT: usize = 2;

/// One output plane of a stride-1 convolution by shifted row accumulation,
/// summing input channels and taps in patch-matrix order.
fn conv_direct(x: &[f64], cin: usize, w: &[f64], spec: &ConvSpec, out: &mut [f64]) {
    let k = spec.kernel;
    out.fill(0.0);
    for c in 0..cin {
        let plane = &x[c * spec.in_h * spec.in_w..(c + 1) * spec.in_h * spec.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let wv = w[(c * k + ki) * k + kj];
                let (lo, hi) = valid_range(spec, kj);
                if lo == hi {
                    continue;
                }
                let start = lo + kj - spec.pad;
                for oy in 0..spec.out_h {
                    let iy = (oy + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= spec.in_h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * spec.in_w + start
                        ..iy as usize * spec.in_w + start + hi - lo];
                    let dst = &mut out[oy * spec.out_w + lo..oy * spec.out_w + hi];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
}

/// `c (m×n, row stride ldc) = a (m×k) · b (k×n) + beta · c` with explicit operand strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= extent(m, k, a_strides) && b.len() >= extent(k, n, b_strides));
    assert!(c.len() >= extent(m, n, (ldc as isize, 1)));
    // SAFETY: the assertions above check that every strided access stays
    // inside its operand slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `y = conv(x, w)`; `x: N×Cin×H×W`, `w: Cout×Cin×k×k`, no bias.
pub fn conv2d(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Tensor {
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, kh, kw) = w.dims4();
    assert_eq!(
        (cin, kh, kw, h, wd),
        (wcin, spec.kernel, spec.kernel, spec.in_h, spec.in_w),
        "conv2d geometry"
    );
    let (kdim, p) = spec.cols(cin);
    let mut out = vec![0.0; n * cout * p];
    let mut cols = Vec::new();
    for i in 0..n {
        let xi = &x.data()[i * cin * h * wd..(i + 1) * cin * h * wd];
        let yi = &mut out[i * cout * p..(i + 1) * cout * p];
        if spec.is_pointwise() {
            gemm(
                cout,
                kdim,
                p,
                w.data(),
                (kdim as isize, 1),
                xi,
                (p as isize, 1),
                0.0,
                yi,
                p,
            );
            continue;
        }
        if cout <= DIRECT_MAX_COUT && spec.stride == 1 {
            for (o, yo) in yi.chunks_mut(p).enumerate() {
                conv_direct(xi, cin, &w.data()[o * kdim..(o + 1) * kdim], spec, yo);
            }
            continue;
        }
        for rows in row_blocks(spec, kdim) {
            let pc = (rows.1 - rows.0) * spec.out_w;
            cols.resize(kdim * pc, 0.0);
            im2col(xi, cin, spec, rows, &mut cols);
            let c = &mut yi[rows.0 * spec.out_w..];
            gemm(
                cout,
                kdim,
                pc,
                w.data(),
                (kdim as isize, 1),
                &cols,
                (pc as isize, 1),
                0.0,
                c,
                p,
            );
        }
    }
    Tensor::new(vec![n, cout, spec.out_h, spec.out_w], out)
}

/// `x = ∂<y, conv(x, w)>/∂x`, i.e. the transposed convolution of `y` by `w`.
pub fn conv2d_data(y: &Tensor, w: &Tensor, spec: &ConvSpec) -> Tensor {
    let (n, cout, oh, ow) = y.dims4();
    let (wcout, cin, _, _) = w.dims4();
    assert_eq!(
        (cout, oh, ow),
        (wcout, spec.out_h, spec.out_w),
        "conv2d_data geometry"
    );
    let (kdim, p) = spec.cols(cin);
    let plane = cin * spec.in_h * spec.in_w;
    let mut out = vec![0.0; n * plane];
    let mut cols = Vec::new();
    for i in 0..n {
        let yi = &y.data()[i * cout * p..(i + 1) * cout * p];
        let xi = &mut out[i * plane..(i + 1) * plane];
        if spec.is_pointwise() {
            gemm(
                kdim,
                cout,
                p,
                w.data(),
                (1, kdim as isize),
                yi,
                (p as isize, 1),
                0.0,
                xi,
                p,
            );
            continue;
        }
        for rows in row_blocks(spec, kdim) {
            let pc = (rows.1 - rows.0) * spec.out_w;
            cols.resize(kdim * pc, 0.0);
            let b = &yi[rows.0 * spec.out_w..];
            gemm(
                kdim,
                cout,
                pc,
                w.data(),
                (1, kdim as isize),
                b,
                (p as isize, 1),
                0.0,
                &mut cols,
                pc,
            );
            col2im(&cols, cin, spec, rows, xi);
        }
    }
    Tensor::new(vec![n, cin, spec.in_h, spec.in_w], out)
}

/// `w = ∂<y, conv(x, w)>/∂w`, summed over the batch in index order.
pub fn conv2d_weight(x: &Tensor, y: &Tensor, spec: &ConvSpec) -> Tensor {
    let (n, cin, h, wd) = x.dims4();
    let (yn, cout, oh, ow) = y.dims4();
    assert_eq!(
        (n, h, wd, oh, ow),
        (yn, spec.in_h, spec.in_w, spec.out_h, spec.out_w),
        "conv2d_weight geometry"
    );
    let (kdim, p) = spec.cols(cin);
    let mut out = vec![0.0; cout * kdim];
    let mut cols = Vec::new();
    let mut first = true;
    for i in 0..n {
        let xi = &x.data()[i * cin * h * wd..(i + 1) * cin * h * wd];
        let yi = &y.data()[i * cout * p..(i + 1) * cout * p];
        if spec.is_pointwise() {
            let beta = if first { 0.0 } else { 1.0 };
            gemm(
                cout,
                p,
                kdim,
                yi,
                (p as isize, 1),
                xi,
                (1, p as isize),
                beta,
                &mut out,
                kdim,
            );
            first = false;
            continue;
        }
        for rows in row_blocks(spec, kdim) {
            let pc = (rows.1 - rows.0) * spec.out_w;
            cols.resize(kdim * pc, 0.0);
            im2col(xi, cin, spec, rows, &mut cols);
            let a = &yi[rows.0 * spec.out_w..];
            let beta = if first { 0.0 } else { 1.0 };
            gemm(
                cout,
                pc,
                kdim,
                a,
                (p as isize, 1),
                &cols,
                (1, pc as isize),
                beta,
                &mut out,
                kdim,
            );
            first = false;
        }
    }
    Tensor::new(vec![cout, cin, spec.kernel, spec.kernel], out)
}

/// Per-channel `(x − shift) · gain + offset` over an `N×C×H×W` tensor.
pub fn channel_normalize(x: &Tensor, shift: &Tensor, gain: &Tensor, offset: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    assert!(
        shift.len() == c && gain.len() == c && offset.len() == c,
        "one coefficient per channel"
    );
    let hw = h * w;
    let mut out = x.data().to_vec();
    for (j, chunk) in out.chunks_mut(hw).enumerate().take(n * c) {
        let ch = j % c;
        let (m, g, b) = (shift.data()[ch], gain.data()[ch], offset.data()[ch]);
        for v in chunk {
            *v = (*v - m) * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Sum over batch and spatial axes: `N×C×H×W → C`.
pub fn channel_sum(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut out = vec![0.0; c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (i * c + ch) * hw;
            *o += x.data()[base..base + hw].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], out)
}

/// `C → N×C×H×W` broadcast.
pub fn channel_expand(v: &Tensor, shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(v.len(), c);
    let mut out = Vec::with_capacity(n * c * h * w);
    for _ in 0..n {
        for &val in v.data() {
            out.extend(std::iter::repeat_n(val, h * w));
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Per-sample sum: `N×… → N`.
pub fn sample_sum(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let per = x.len() / n;
    Tensor::new(
        vec![n],
        x.data().chunks(per).map(|c| c.iter().sum()).collect(),
    )
}

pub fn sample_expand(v: &Tensor, shape: &[usize]) -> Tensor {
    let n = shape[0];
    assert_eq!(v.len(), n);
    let per: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(n * per);
    for &val in v.data() {
        out.extend(std::iter::repeat_n(val, per));
    }
    Tensor::new(shape.to_vec(), out)
}

/// Spatial sum: `N×C×H×W → N×C×1×1`.
pub fn spatial_sum(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    Tensor::new(
        vec![n, c, 1, 1],
        x.data().chunks(h * w).map(|p| p.iter().sum()).collect(),
    )
}

pub fn spatial_expand(v: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, _, _) = v.dims4();
    let mut out = Vec::with_capacity(n * c * h * w);
    for &val in v.data() {
        out.extend(std::iter::repeat_n(val, h * w));
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Sums consecutive groups of `k` batch entries: `(N·k)×… → N×…`.
///
/// Each output element sums its `k` inputs in ascending value order, which
/// makes the result exactly invariant to permutations inside a group.
pub fn group_sum(x: &Tensor, k: usize) -> Tensor {
    let nk = x.shape()[0];
    assert_eq!(nk % k, 0, "batch {nk} not divisible by group {k}");
    let per = x.len() / nk;
    let n = nk / k;
    let mut out = vec![0.0; n * per];
    let mut buf = vec![0.0; k];
    for g in 0..n {
        for e in 0..per {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x.data()[(g * k + j) * per + e];
            }
            buf.sort_by(f64::total_cmp);
            out[g * per + e] = buf.iter().sum();
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = n;
    Tensor::new(shape, out)
}

pub fn group_repeat(x: &Tensor, k: usize) -> Tensor {
    let n = x.shape()[0];
    let per = x.len() / n;
    let mut out = Vec::with_capacity(x.len() * k);
    for g in 0..n {
        for _ in 0..k {
            out.extend_from_slice(&x.data()[g * per..(g + 1) * per]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = n * k;
    Tensor::new(shape, out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    assert_eq!((n, h, w), (nb, hb, wb), "concat_channels geometry");
    let hw = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    assert!(start + len <= c);
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for i in 0..n {
        out.extend_from_slice(&x.data()[(i * c + start) * hw..(i * c + start + len) * hw]);
    }
    Tensor::new(vec![n, len, h, w], out)
}

/// Zero-pads `x` into `total` channels starting at `start` (adjoint of [`slice_channels`]).
pub fn embed_channels(x: &Tensor, start: usize, total: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    assert!(start + c <= total);
    let hw = h * w;
    let mut out = vec![0.0; n * total * hw];
    for i in 0..n {
        out[(i * total + start) * hw..(i * total + start + c) * hw]
            .copy_from_slice(&x.data()[i * c * hw..(i + 1) * c * hw]);
    }
    Tensor::new(vec![n, total, h, w], out)
}

pub fn slice_batch(x: &Tensor, start: usize, len: usize) -> Tensor {
    let n = x.shape()[0];
    assert!(start + len <= n);
    let per = x.len() / n;
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Tensor::new(shape, x.data()[start * per..(start + len) * per].to_vec())
}

pub fn embed_batch(x: &Tensor, start: usize, total: usize) -> Tensor {
    let n = x.shape()[0];
    let per = x.len() / n;
    let mut out = vec![0.0; total * per];
    out[start * per..(start + n) * per].copy_from_slice(x.data());
    let mut shape = x.shape().to_vec();
    shape[0] = total;
    Tensor::new(shape, out)
}
