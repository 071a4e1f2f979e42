//! im2col + sgemm convolution kernels on NCHW tensors.
//!
//! The three entry points are mutually adjoint: the input gradient of a
//! convolution is [`conv2d_input_grad`], the weight gradient is
//! [`conv2d_weight_grad`], and the same pair differentiates each of them.

use crate::tensor::Tensor;

/// Zero padding on each side of the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Output keeps the input size for stride 1, also for even kernels
    /// (the extra row/column goes to the bottom/right).
    pub fn same(kernel: usize) -> Self {
        let before = (kernel - 1) / 2;
        let after = kernel - 1 - before;
        Self {
            top: before,
            bottom: after,
            left: before,
            right: after,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: Padding,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: Padding) -> Self {
        assert!(stride >= 1, "stride must be >= 1");
        Self { stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let ph = h + self.pad.top + self.pad.bottom;
        let pw = w + self.pad.left + self.pad.right;
        assert!(
            ph >= kh && pw >= kw,
            "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
        );
        ((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1)
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

/// Range of output columns whose input column `o * s + k - pad` lands in `[0, len)`.
fn valid_range(len: usize, out: usize, k: usize, pad: usize, s: usize) -> (usize, usize) {
    // o * s + k >= pad  and  o * s + k - pad <= len - 1
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
    let hi_num = len + pad; // o*s + k < len + pad
    let hi = if hi_num > k {
        ((hi_num - k - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo.min(out), hi.max(lo.min(out)))
}

fn im2col(x: &[f32], d: &Dims, g: &ConvGeom, cols: &mut [f32]) {
    let s = g.stride;
    let p = d.oh * d.ow;
    let mut row = 0;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (oy_lo, oy_hi) = valid_range(d.h, d.oh, ki, g.pad.top, s);
            for kj in 0..d.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = valid_range(d.w, d.ow, kj, g.pad.left, s);
                for oy in 0..d.oh {
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if oy < oy_lo || oy >= oy_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * s + ki - g.pad.top;
                    let src = &plane[iy * d.w..(iy + 1) * d.w];
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    if s == 1 {
                        let start = ox_lo + kj - g.pad.left;
                        line[ox_lo..ox_hi].copy_from_slice(&src[start..start + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src[ox * s + kj - g.pad.left];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f32], d: &Dims, g: &ConvGeom, x: &mut [f32]) {
    let s = g.stride;
    let p = d.oh * d.ow;
    let mut row = 0;
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (oy_lo, oy_hi) = valid_range(d.h, d.oh, ki, g.pad.top, s);
            for kj in 0..d.kw {
                let src = &cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = valid_range(d.w, d.ow, kj, g.pad.left, s);
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - g.pad.top;
                    let dst = &mut plane[iy * d.w..(iy + 1) * d.w];
                    let line = &src[oy * d.ow..(oy + 1) * d.ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox * s + kj - g.pad.left] += line[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// C (m×n) = alpha · op(A) (m×k) · op(B) (k×n) + beta · C, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that cover every index reachable through the
    // given dimensions and strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_pointwise(d: &Dims, g: &ConvGeom) -> bool {
    d.kh == 1 && d.kw == 1 && g.stride == 1 && g.pad == Padding::uniform(0)
}

/// `x: [N, C, H, W]`, `w: [O, C, kh, kw]` → `[N, O, oh, ow]`.
pub fn conv2d(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (n, c, h, wd) = dims4(x);
    let (o, wc, kh, kw) = dims4(w);
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
    let (oh, ow) = g.out_hw(h, wd, kh, kw);
    let d = Dims { c, h, w: wd, kh, kw, oh, ow };
    let kdim = c * kh * kw;
    let p = oh * ow;
    let mut out = vec![0.0f32; n * o * p];
    let mut cols = if is_pointwise(&d, g) { Vec::new() } else { vec![0.0f32; kdim * p] };
    let xd = x.data();
    for b in 0..n {
        let xb = &xd[b * c * h * wd..(b + 1) * c * h * wd];
        let colsb: &[f32] = if is_pointwise(&d, g) {
            xb
        } else {
            im2col(xb, &d, g, &mut cols);
            &cols
        };
        gemm(
            o,
            kdim,
            p,
            w.data(),
            kdim as isize,
            1,
            colsb,
            p as isize,
            1,
            0.0,
            &mut out[b * o * p..(b + 1) * o * p],
        );
    }
    Tensor::new(&[n, o, oh, ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input (a transposed convolution).
///
/// `gy: [N, O, oh, ow]`, `w: [O, C, kh, kw]`, `in_hw` the spatial size of the
/// convolution input → `[N, C, H, W]`.
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, in_hw: (usize, usize), g: &ConvGeom) -> Tensor {
    let (n, o, oh, ow) = dims4(gy);
    let (wo, c, kh, kw) = dims4(w);
    assert_eq!(o, wo, "conv2d_input_grad channel mismatch: grad {o}, weight {wo}");
    let (h, wd) = in_hw;
    assert_eq!(
        g.out_hw(h, wd, kh, kw),
        (oh, ow),
        "conv2d_input_grad: input size {h}x{wd} inconsistent with output {oh}x{ow}"
    );
    let d = Dims { c, h, w: wd, kh, kw, oh, ow };
    let kdim = c * kh * kw;
    let p = oh * ow;
    let mut out = vec![0.0f32; n * c * h * wd];
    let mut cols = vec![0.0f32; kdim * p];
    let gd = gy.data();
    for b in 0..n {
        let gb = &gd[b * o * p..(b + 1) * o * p];
        let xb = &mut out[b * c * h * wd..(b + 1) * c * h * wd];
        if is_pointwise(&d, g) {
            gemm(kdim, o, p, w.data(), 1, kdim as isize, gb, p as isize, 1, 0.0, xb);
        } else {
            gemm(kdim, o, p, w.data(), 1, kdim as isize, gb, p as isize, 1, 0.0, &mut cols);
            col2im(&cols, &d, g, xb);
        }
    }
    Tensor::new(&[n, c, h, wd], out)
}

/// Adjoint of [`conv2d`] with respect to its weight.
///
/// `x: [N, C, H, W]`, `gy: [N, O, oh, ow]` → `[O, C, kh, kw]`.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, k_hw: (usize, usize), g: &ConvGeom) -> Tensor {
    let (n, c, h, wd) = dims4(x);
    let (gn, o, oh, ow) = dims4(gy);
    assert_eq!(n, gn, "conv2d_weight_grad batch mismatch");
    let (kh, kw) = k_hw;
    assert_eq!(g.out_hw(h, wd, kh, kw), (oh, ow), "conv2d_weight_grad: inconsistent sizes");
    let d = Dims { c, h, w: wd, kh, kw, oh, ow };
    let kdim = c * kh * kw;
    let p = oh * ow;
    let mut out = vec![0.0f32; o * kdim];
    let mut cols = if is_pointwise(&d, g) { Vec::new() } else { vec![0.0f32; kdim * p] };
    let (xd, gd) = (x.data(), gy.data());
    for b in 0..n {
        let xb = &xd[b * c * h * wd..(b + 1) * c * h * wd];
        let colsb: &[f32] = if is_pointwise(&d, g) {
            xb
        } else {
            im2col(xb, &d, g, &mut cols);
            &cols
        };
        let gb = &gd[b * o * p..(b + 1) * o * p];
        let beta = if b == 0 { 0.0 } else { 1.0 };
        gemm(o, p, kdim, gb, p as isize, 1, colsb, 1, p as isize, beta, &mut out);
    }
    Tensor::new(&[o, c, kh, kw], out)
}

pub(crate) fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected a rank-4 tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}
