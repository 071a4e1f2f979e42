//! 256-bin channel histograms and CDF-based histogram matching.

use crate::error::{Error, Result};
use crate::image::{luma, Image, Mask};

pub const BINS: usize = 256;

/// Bin of a value in `[0, 1]`; values outside are clamped to the end bins.
pub fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * BINS as f32) as usize).min(BINS - 1)
}

/// Histograms of R, G, B and luminance. Each bin counts pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramSet {
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub gray: Vec<f64>,
}

impl HistogramSet {
    pub fn channel(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.r,
            1 => &self.g,
            2 => &self.b,
            _ => &self.gray,
        }
    }

    pub fn mass(&self) -> f64 {
        self.r.iter().sum()
    }
}

pub fn histogram(values: impl IntoIterator<Item = f32>) -> Vec<f64> {
    let mut h = vec![0.0; BINS];
    for v in values {
        h[bin_of(v)] += 1.0;
    }
    h
}

/// Histograms over the whole image or over pixels with mask value above 0.5.
pub fn extract_histograms(image: &Image, mask: Option<&Mask>) -> Result<HistogramSet> {
    let idx: Vec<usize> = match mask {
        Some(m) => {
            if !image.same_size(m) {
                return Err(Error::data("histogram mask size differs from image"));
            }
            (0..image.num_pixels()).filter(|&i| m.is_inside(i)).collect()
        }
        None => (0..image.num_pixels()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::data("histogram over an empty region"));
    }
    let ch = |c: usize| histogram(idx.iter().map(|&i| image.data[3 * i + c]));
    Ok(HistogramSet {
        r: ch(0),
        g: ch(1),
        b: ch(2),
        gray: histogram(idx.iter().map(|&i| luma(image.pixel(i)))),
    })
}

/// Inverse of the piecewise-linear CDF of `hist` (mass spread uniformly
/// inside each bin), evaluated at fraction `p` of the total mass.
pub fn quantile(cum: &[f64], hist: &[f64], p: f64) -> f32 {
    let total = cum[BINS];
    let t = (p * total).clamp(0.0, total);
    // First bin whose upper cumulative reaches t.
    let k = cum[1..].partition_point(|&c| c < t).min(BINS - 1);
    let frac = if hist[k] > 0.0 { (t - cum[k]) / hist[k] } else { 0.0 };
    ((k as f64 + frac.clamp(0.0, 1.0)) / BINS as f64) as f32
}

pub fn cumulative(hist: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(BINS + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for &h in hist {
        acc += h;
        cum.push(acc);
    }
    cum
}

/// Monotone remapping `T(v) = Q_target(F_source(v))`.
///
/// `F_source` is the exact empirical CDF of `pixels` evaluated at mid-rank
/// (ties share the midpoint of their rank interval), so the output's
/// empirical distribution reproduces the target quantiles.
pub fn histogram_match(pixels: &[f32], target: &[f64]) -> Result<Vec<f32>> {
    if pixels.is_empty() {
        return Err(Error::data("histogram_match needs at least one pixel"));
    }
    if target.len() != BINS {
        return Err(Error::data(format!("target histogram needs {BINS} bins")));
    }
    if target.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
        return Err(Error::data("target histogram has negative or non-finite bins"));
    }
    let cum = cumulative(target);
    if cum[BINS] <= 0.0 {
        return Err(Error::data("target histogram has zero mass"));
    }
    let n = pixels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pixels[a].total_cmp(&pixels[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let v = pixels[order[start]];
        let mut end = start + 1;
        while end < n && pixels[order[end]] == v {
            end += 1;
        }
        let p = (start + end) as f64 / (2.0 * n as f64);
        let q = quantile(&cum, target, p);
        for &i in &order[start..end] {
            out[i] = q;
        }
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_maps_to_point_mass() {
        let target = histogram(std::iter::repeat_n(0.8, 50));
        let out = histogram_match(&[0.2; 20], &target).unwrap();
        assert!(out.iter().all(|v| (v - 0.8).abs() <= 1.0 / 256.0));
    }

    #[test]
    fn zero_mass_target_is_rejected() {
        assert!(histogram_match(&[0.1], &[0.0; BINS]).is_err());
    }

    #[test]
    fn quantile_is_monotone() {
        let h: Vec<f64> = (0..BINS).map(|i| (i % 7) as f64).collect();
        let cum = cumulative(&h);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let q = quantile(&cum, &h, i as f64 / 1000.0);
            assert!(q >= prev);
            prev = q;
        }
    }
}
