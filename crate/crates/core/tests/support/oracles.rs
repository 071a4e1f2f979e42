//! Independent f64 reference implementations shared by test targets.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use tryon_core::nets::GeneratorArch;
use tryon_core::perceptual::FeatureEncoder;
use tryon_core::renderer::histogram::BINS;
use tryon_tensor::Tensor;

/// `[c, h, w]` plane stack in f64.
#[derive(Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, d: vec![0.0; c * h * w] }
    }

    pub fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0.0
        } else {
            self.d[(c * self.h + y as usize) * self.w + x as usize]
        }
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.d.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

pub fn t64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Cross-correlation with weight `[o, i, k, k]` and padding (top, left,
/// bottom, right).
pub fn conv(x: &Map, w: &[f64], o: usize, k: usize, s: usize, pad: (usize, usize, usize, usize), bias: Option<&[f64]>) -> Map {
    let (top, left, bottom, right) = pad;
    let oh = (x.h + top + bottom - k) / s + 1;
    let ow = (x.w + left + right - k) / s + 1;
    let mut out = Map::zeros(o, oh, ow);
    for co in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                for ci in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * s + ky) as isize - top as isize;
                            let xx = (ox * s + kx) as isize - left as isize;
                            acc += w[((co * x.c + ci) * k + ky) * k + kx] * x.at(ci, y, xx);
                        }
                    }
                }
                out.d[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Transposed convolution with weight `[in, out, k, k]`.
pub fn conv_t(x: &Map, w: &[f64], o: usize, k: usize, s: usize, p: usize) -> Map {
    let oh = (x.h - 1) * s + k - 2 * p;
    let ow = (x.w - 1) * s + k - 2 * p;
    let mut out = Map::zeros(o, oh, ow);
    for ci in 0..x.c {
        for iy in 0..x.h {
            for ix in 0..x.w {
                let v = x.d[(ci * x.h + iy) * x.w + ix];
                for co in 0..o {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (iy * s + ky) as isize - p as isize;
                            let xx = (ix * s + kx) as isize - p as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < oh && (xx as usize) < ow {
                                out.d[(co * oh + y as usize) * ow + xx as usize] +=
                                    v * w[((ci * o + co) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn inorm(x: &Map, gamma: &[f64], beta: &[f64]) -> Map {
    let plane = x.h * x.w;
    let mut out = x.clone();
    for c in 0..x.c {
        let p = &x.d[c * plane..(c + 1) * plane];
        let mean = p.iter().sum::<f64>() / plane as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        let is = 1.0 / (var + 1e-5).sqrt();
        for i in 0..plane {
            out.d[c * plane + i] = (p[i] - mean) * is * gamma[c] + beta[c];
        }
    }
    out
}

pub fn relu(x: Map) -> Map {
    x.map(|v| v.max(0.0))
}

pub fn add(a: &Map, b: &Map) -> Map {
    let mut o = a.clone();
    o.d.iter_mut().zip(&b.d).for_each(|(x, y)| *x += y);
    o
}

/// Reference perceptual distance of two `[3, h, w]` maps.
pub fn ref_distance(enc: &FeatureEncoder, x: &Map, y: &Map) -> f64 {
    let (mut a, mut b, mut total) = (x.clone(), y.clone(), 0.0);
    for s in enc.stages() {
        let ws = s.weight.shape();
        let (o, k) = (ws[0], ws[2]);
        let (w, bias) = (t64(&s.weight), t64(&s.bias));
        let p = k / 2;
        a = relu(conv(&a, &w, o, k, s.stride, (p, p, p, p), Some(&bias)));
        b = relu(conv(&b, &w, o, k, s.stride, (p, p, p, p), Some(&bias)));
        total += a.d.iter().zip(&b.d).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.d.len() as f64;
    }
    total
}

/// Reference generator forward for one image and graphics vector.
pub fn ref_generator(p: &HashMap<String, Vec<f64>>, arch: &GeneratorArch, x: &Map, g: &[f64]) -> Map {
    let w = arch.width;
    let mut inp = Map::zeros(3 + arch.m, x.h, x.w);
    inp.d[..x.d.len()].copy_from_slice(&x.d);
    for (j, &gj) in g.iter().enumerate() {
        let plane = x.h * x.w;
        inp.d[(3 + j) * plane..(4 + j) * plane].iter_mut().for_each(|v| *v = gj);
    }
    let ci = |name: &str, h: &Map, o: usize, k: usize, s: usize, pad| {
        let c = conv(h, &p[&format!("{name}.conv.weight")], o, k, s, pad, None);
        inorm(&c, &p[&format!("{name}.norm.gamma")], &p[&format!("{name}.norm.beta")])
    };
    let mut h = relu(ci("stem", &inp, w, 7, 1, (3, 3, 3, 3)));
    h = relu(ci("down0", &h, 2 * w, 4, 2, (1, 1, 1, 1)));
    h = relu(ci("down1", &h, 4 * w, 4, 2, (1, 1, 1, 1)));
    for i in 0..arch.res_blocks {
        let a = relu(ci(&format!("res{i}.a"), &h, 4 * w, 4, 1, (1, 1, 2, 2)));
        let b = ci(&format!("res{i}.b"), &a, 4 * w, 4, 1, (1, 1, 2, 2));
        h = add(&h, &b);
    }
    for (i, o) in [(0, 2 * w), (1, w)] {
        let u = conv_t(&h, &p[&format!("up{i}.conv.weight")], o, 4, 2, 1);
        h = relu(inorm(&u, &p[&format!("up{i}.norm.gamma")], &p[&format!("up{i}.norm.beta")]));
    }
    let r = conv(&h, &p["head.weight"], 3, 7, 1, (3, 3, 3, 3), Some(&p["head.bias"])).map(f64::tanh);
    add(x, &r).map(|v| v.clamp(0.0, 1.0))
}

pub fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Map {
    Map { c, h, w, d: (0..c * h * w).map(|_| rng.random_range(0.05..0.95)).collect() }
}

pub fn to_tensor(maps: &[&Map]) -> Tensor {
    let m = maps[0];
    Tensor::new(&[maps.len(), m.c, m.h, m.w], maps.iter().flat_map(|m| m.d.iter().map(|&v| v as f32)).collect())
}

pub fn agreement(analytic: &[f64], numeric: &[f64]) -> f64 {
    let ok = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| {
            let scale = a.abs().max(n.abs());
            scale < 1e-7 || (*a - *n).abs() / scale < 1e-3
        })
        .count();
    ok as f64 / analytic.len() as f64
}

/// Target value at each source rank from the target histogram expanded into
/// sorted point masses at bin sub-centres.
pub fn transport_oracle(n: usize, target: &[f64]) -> Vec<f64> {
    let mut points = Vec::new();
    for (b, &c) in target.iter().enumerate() {
        let c = c as usize;
        for k in 0..c {
            points.push((b as f64 + (k as f64 + 0.5) / c as f64) / BINS as f64);
        }
    }
    (0..n)
        .map(|i| {
            // Generalized inverse: the first point whose rank reaches t.
            let t = (i as f64 + 0.5) / n as f64 * points.len() as f64;
            points[(t.ceil() as usize).saturating_sub(1).min(points.len() - 1)]
        })
        .collect()
}

pub fn kolmogorov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let (mut fa, mut fb, mut d) = (0.0, 0.0, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        fa += x / ma;
        fb += y / mb;
        d = d.max((fa - fb).abs());
    }
    d
}
