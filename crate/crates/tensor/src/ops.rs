//! Differentiable ops on [`Var`].

use crate::conv::{self, ConvGeom};
use crate::graph::{Backward, Var};
use crate::tensor::{numel, Tensor};

macro_rules! backward_struct {
    ($name:ident $( { $($field:ident : $ty:ty),* } )?) => {
        struct $name { $($($field: $ty),*)? }
    };
}

fn reduce(grad: &Var, shape: &[usize]) -> Var {
    if grad.shape() == shape {
        grad.clone()
    } else {
        grad.sum_to(shape)
    }
}

backward_struct!(AddBack);
impl Backward for AddBack {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(reduce(g, p[0].shape())), Some(reduce(g, p[1].shape()))]
    }
}

backward_struct!(SubBack);
impl Backward for SubBack {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let gb = if p[1].requires_grad() { Some(reduce(&g.neg(), p[1].shape())) } else { None };
        vec![Some(reduce(g, p[0].shape())), gb]
    }
}

backward_struct!(MulBack);
impl Backward for MulBack {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let ga = p[0].requires_grad().then(|| reduce(&g.mul(&p[1]), p[0].shape()));
        let gb = p[1].requires_grad().then(|| reduce(&g.mul(&p[0]), p[1].shape()));
        vec![ga, gb]
    }
}

backward_struct!(DivBack);
impl Backward for DivBack {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let ga = p[0].requires_grad().then(|| reduce(&g.div(&p[1]), p[0].shape()));
        let gb = p[1]
            .requires_grad()
            .then(|| reduce(&g.mul(out).div(&p[1]).neg(), p[1].shape()));
        vec![ga, gb]
    }
}

backward_struct!(ScaleBack { factor: f32 });
impl Backward for ScaleBack {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.scale(self.factor))]
    }
}

backward_struct!(IdentityBack);
impl Backward for IdentityBack {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.clone())]
    }
}

// Gradient times a fixed elementwise mask (ReLU, clamp, abs, ...).
backward_struct!(MaskBack { name: &'static str, mask: Tensor });
impl Backward for MaskBack {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.mul(&Var::constant(self.mask.clone())))]
    }
}

backward_struct!(TanhBack);
impl Backward for TanhBack {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        let one_minus = out.mul(out).neg().add_scalar(1.0);
        vec![Some(g.mul(&one_minus))]
    }
}

backward_struct!(SigmoidBack);
impl Backward for SigmoidBack {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        let d = out.mul(&out.neg().add_scalar(1.0));
        vec![Some(g.mul(&d))]
    }
}

backward_struct!(SqrtBack);
impl Backward for SqrtBack {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        // d sqrt(x) = 1 / (2 sqrt(x)); taken as 0 at x = 0.
        let inv = out.value().map(|y| if y > 0.0 { 0.5 / y } else { 0.0 });
        vec![Some(g.mul(&Var::constant(inv)))]
    }
}

backward_struct!(ReshapeBack { shape: Vec<usize> });
impl Backward for ReshapeBack {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.reshape(&self.shape))]
    }
}

backward_struct!(BroadcastBack { shape: Vec<usize> });
impl Backward for BroadcastBack {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.sum_to(&self.shape))]
    }
}

backward_struct!(SumToBack { shape: Vec<usize> });
impl Backward for SumToBack {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.broadcast_to(&self.shape))]
    }
}

backward_struct!(TransposeBack);
impl Backward for TransposeBack {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.transpose())]
    }
}

backward_struct!(MatmulBack);
impl Backward for MatmulBack {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let ga = p[0].requires_grad().then(|| g.matmul(&p[1].transpose()));
        let gb = p[1].requires_grad().then(|| p[0].transpose().matmul(g));
        vec![ga, gb]
    }
}

backward_struct!(NarrowBack { axis: usize, start: usize, full: usize });
impl Backward for NarrowBack {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.pad_axis(self.axis, self.start, self.full))]
    }
}

backward_struct!(PadBack { axis: usize, start: usize, len: usize });
impl Backward for PadBack {
    fn name(&self) -> &'static str {
        "pad_axis"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        vec![Some(g.narrow(self.axis, self.start, self.len))]
    }
}

backward_struct!(CatBack { axis: usize, sizes: Vec<usize> });
impl Backward for CatBack {
    fn name(&self) -> &'static str {
        "cat"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let mut start = 0;
        self.sizes
            .iter()
            .zip(p)
            .map(|(&len, parent)| {
                let s = start;
                start += len;
                parent.requires_grad().then(|| g.narrow(self.axis, s, len))
            })
            .collect()
    }
}

backward_struct!(ConvBack { geom: ConvGeom });
impl Backward for ConvBack {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let (x, w) = (&p[0], &p[1]);
        let in_hw = (x.shape()[2], x.shape()[3]);
        let k_hw = (w.shape()[2], w.shape()[3]);
        vec![
            x.requires_grad().then(|| g.conv2d_input_grad(w, in_hw, self.geom)),
            w.requires_grad().then(|| x.conv2d_weight_grad(g, k_hw, self.geom)),
        ]
    }
}

backward_struct!(ConvInputGradBack { geom: ConvGeom });
impl Backward for ConvInputGradBack {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let (gy, w) = (&p[0], &p[1]);
        let k_hw = (w.shape()[2], w.shape()[3]);
        vec![
            gy.requires_grad().then(|| g.conv2d(w, self.geom)),
            w.requires_grad().then(|| g.conv2d_weight_grad(gy, k_hw, self.geom)),
        ]
    }
}

backward_struct!(ConvWeightGradBack { geom: ConvGeom });
impl Backward for ConvWeightGradBack {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, _out: &Var, g: &Var, p: &[Var]) -> Vec<Option<Var>> {
        let (x, gy) = (&p[0], &p[1]);
        let in_hw = (x.shape()[2], x.shape()[3]);
        vec![
            x.requires_grad().then(|| gy.conv2d_input_grad(g, in_hw, self.geom)),
            gy.requires_grad().then(|| x.conv2d(g, self.geom)),
        ]
    }
}

backward_struct!(InstanceNormBack { normalized: Tensor, inv_std: Vec<f32> });
impl Backward for InstanceNormBack {
    fn name(&self) -> &'static str {
        "instance_norm"
    }
    fn backward(&self, _out: &Var, g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        let gx = instance_norm_grad(g.value(), &self.normalized, &self.inv_std);
        vec![Some(Var::from_op(gx, vec![g.clone()], FirstOrderOnly("instance_norm_grad")))]
    }
}

/// Marks a backward result that cannot be differentiated again.
struct FirstOrderOnly(&'static str);
impl Backward for FirstOrderOnly {
    fn name(&self) -> &'static str {
        self.0
    }
    fn backward(&self, _out: &Var, _g: &Var, _p: &[Var]) -> Vec<Option<Var>> {
        panic!("second-order gradients through {} are not supported", self.0)
    }
}

fn instance_norm_grad(g: &Tensor, y: &Tensor, inv_std: &[f32]) -> Tensor {
    let s = y.shape();
    let plane = s[2] * s[3];
    let (gd, yd) = (g.data(), y.data());
    let mut out = vec![0.0f32; gd.len()];
    for (i, &is) in inv_std.iter().enumerate() {
        let r = i * plane..(i + 1) * plane;
        let (gp, yp) = (&gd[r.clone()], &yd[r.clone()]);
        let mut mean_g = 0.0f64;
        let mut mean_gy = 0.0f64;
        for (&a, &b) in gp.iter().zip(yp) {
            mean_g += a as f64;
            mean_gy += (a * b) as f64;
        }
        let mean_g = (mean_g / plane as f64) as f32;
        let mean_gy = (mean_gy / plane as f64) as f32;
        for ((o, &a), &b) in out[r].iter_mut().zip(gp).zip(yp) {
            *o = is * (a - mean_g - b * mean_gy);
        }
    }
    Tensor::new(s, out)
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a + b),
            vec![self.clone(), other.clone()],
            AddBack {},
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a - b),
            vec![self.clone(), other.clone()],
            SubBack {},
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a * b),
            vec![self.clone(), other.clone()],
            MulBack {},
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a / b),
            vec![self.clone(), other.clone()],
            DivBack {},
        )
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f32) -> Var {
        Var::from_op(
            self.value().map(|v| v * factor),
            vec![self.clone()],
            ScaleBack { factor },
        )
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        Var::from_op(self.value().map(|v| v + c), vec![self.clone()], IdentityBack {})
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(f32::sqrt), vec![self.clone()], SqrtBack {})
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().map(f32::tanh), vec![self.clone()], TanhBack {})
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(
            self.value().map(|v| 1.0 / (1.0 + (-v).exp())),
            vec![self.clone()],
            SigmoidBack {},
        )
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        let x = self.value();
        let out = x.map(|v| if v > 0.0 { v } else { v * slope });
        let mask = x.map(|v| if v > 0.0 { 1.0 } else { slope });
        Var::from_op(
            out,
            vec![self.clone()],
            MaskBack {
                name: "leaky_relu",
                mask,
            },
        )
    }

    /// Clamps to `[lo, hi]`; the gradient passes where the input is inside
    /// the closed interval.
    pub fn clamp(&self, lo: f32, hi: f32) -> Var {
        let x = self.value();
        let out = x.map(|v| v.clamp(lo, hi));
        let mask = x.map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
        Var::from_op(out, vec![self.clone()], MaskBack { name: "clamp", mask })
    }

    pub fn abs(&self) -> Var {
        let x = self.value();
        let mask = x.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
        Var::from_op(x.map(f32::abs), vec![self.clone()], MaskBack { name: "abs", mask })
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let from = self.shape().to_vec();
        Var::from_op(
            self.value().reshape(shape),
            vec![self.clone()],
            ReshapeBack { shape: from },
        )
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let from = self.shape().to_vec();
        Var::from_op(
            self.value().broadcast_to(shape),
            vec![self.clone()],
            BroadcastBack { shape: from },
        )
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let from = self.shape().to_vec();
        Var::from_op(
            self.value().sum_to(shape),
            vec![self.clone()],
            SumToBack { shape: from },
        )
    }

    /// Sum of all elements as a rank-0 value.
    pub fn sum(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f32)
    }

    /// Per-sample mean over every axis but the first: `[N, ...]` → `[N]`.
    pub fn mean_per_sample(&self) -> Var {
        let s = self.shape();
        let n = s[0];
        let inner = numel(&s[1..]).max(1);
        let mut keep = vec![1; s.len()];
        keep[0] = n;
        self.sum_to(&keep).reshape(&[n]).scale(1.0 / inner as f32)
    }

    /// Per-sample sum over every axis but the first: `[N, ...]` → `[N]`.
    pub fn sum_per_sample(&self) -> Var {
        let s = self.shape();
        let n = s[0];
        let mut keep = vec![1; s.len()];
        keep[0] = n;
        self.sum_to(&keep).reshape(&[n])
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "transpose expects a matrix, got {s:?}");
        let (r, c) = (s[0], s[1]);
        let x = self.value().data();
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Var::from_op(Tensor::new(&[c, r], out), vec![self.clone()], TransposeBack {})
    }

    /// `[M, K] x [K, N]`.
    pub fn matmul(&self, other: &Var) -> Var {
        let (a, b) = (self.value(), other.value());
        assert!(a.rank() == 2 && b.rank() == 2, "matmul expects matrices");
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0f32; m * n];
        conv::gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, 0.0, &mut out);
        Var::from_op(
            Tensor::new(&[m, n], out),
            vec![self.clone(), other.clone()],
            MatmulBack {},
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let s = self.shape().to_vec();
        assert!(start + len <= s[axis], "narrow out of range");
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let x = self.value().data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        Var::from_op(
            Tensor::new(&shape, out),
            vec![self.clone()],
            NarrowBack {
                axis,
                start,
                full: s[axis],
            },
        )
    }

    /// Zero-pads along `axis` so this tensor sits at `[start, start + len)`
    /// of an axis of size `full`.
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Var {
        let s = self.shape().to_vec();
        let len = s[axis];
        assert!(start + len <= full, "pad_axis out of range");
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let x = self.value().data();
        let mut out = vec![0.0f32; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = s;
        shape[axis] = full;
        Var::from_op(
            Tensor::new(&shape, out),
            vec![self.clone()],
            PadBack { axis, start, len },
        )
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn cat(items: &[Var], axis: usize) -> Var {
        assert!(!items.is_empty(), "cat of zero vars");
        let s0 = items[0].shape().to_vec();
        let sizes: Vec<usize> = items.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let outer = numel(&s0[..axis]);
        let inner = numel(&s0[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in items {
                let vs = v.shape();
                assert!(
                    vs.len() == s0.len()
                        && vs[..axis] == s0[..axis]
                        && vs[axis + 1..] == s0[axis + 1..],
                    "cat shape mismatch: {vs:?} vs {s0:?}"
                );
                let len = vs[axis] * inner;
                out.extend_from_slice(&v.value().data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        Var::from_op(Tensor::new(&shape, out), items.to_vec(), CatBack { axis, sizes })
    }

    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        Var::from_op(
            conv::conv2d(self.value(), weight.value(), &geom),
            vec![self.clone(), weight.clone()],
            ConvBack { geom },
        )
    }

    /// Transposed convolution: adjoint of `conv2d(·, weight)` for an input of
    /// spatial size `in_hw`.
    pub fn conv2d_input_grad(&self, weight: &Var, in_hw: (usize, usize), geom: ConvGeom) -> Var {
        Var::from_op(
            conv::conv2d_input_grad(self.value(), weight.value(), in_hw, &geom),
            vec![self.clone(), weight.clone()],
            ConvInputGradBack { geom },
        )
    }

    pub fn conv2d_weight_grad(&self, gy: &Var, k_hw: (usize, usize), geom: ConvGeom) -> Var {
        Var::from_op(
            conv::conv2d_weight_grad(self.value(), gy.value(), k_hw, &geom),
            vec![self.clone(), gy.clone()],
            ConvWeightGradBack { geom },
        )
    }

    /// Per-(sample, channel) normalization over the spatial axes, no affine.
    pub fn instance_norm(&self, eps: f32) -> Var {
        let x = self.value();
        let (n, c, h, w) = conv::dims4(x);
        let plane = h * w;
        let xd = x.data();
        let mut out = vec![0.0f32; xd.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for i in 0..n * c {
            let r = i * plane..(i + 1) * plane;
            let p = &xd[r.clone()];
            let mean = p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let is = (1.0 / (var + eps as f64).sqrt()) as f32;
            let mean = mean as f32;
            for (o, &v) in out[r].iter_mut().zip(p) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let normalized = Tensor::new(x.shape(), out);
        Var::from_op(
            normalized.clone(),
            vec![self.clone()],
            InstanceNormBack {
                normalized,
                inv_std,
            },
        )
    }
}
