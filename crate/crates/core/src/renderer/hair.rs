//! Hair color: recolor a reference swatch, transfer its per-channel
//! histograms onto the hair, add shine and contrast, then fade from the roots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::histogram::{extract_histograms, histogram_match};
use crate::error::{Error, Result};
use crate::image::{luma, Image};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HairParams {
    pub brightness: f64,
    pub contrast: f64,
    pub exposure: f64,
    pub gamma: f64,
    pub hue: f64,
    pub saturation: f64,
    pub blend: f64,
    pub intensity: f64,
    pub shine: f64,
}

impl HairParams {
    /// From values in hair schema order.
    pub fn from_values(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "hair vector has 9 entries");
        Self {
            brightness: v[0],
            contrast: v[1],
            exposure: v[2],
            gamma: v[3],
            hue: v[4],
            saturation: v[5],
            blend: v[6],
            intensity: v[7],
            shine: v[8],
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        vec![
            self.brightness,
            self.contrast,
            self.exposure,
            self.gamma,
            self.hue,
            self.saturation,
            self.blend,
            self.intensity,
            self.shine,
        ]
    }

    /// Swatch operations that leave the swatch unchanged.
    pub fn identity_swatch() -> Self {
        Self {
            brightness: 0.0,
            contrast: 1.0,
            exposure: 1.0,
            gamma: 1.0,
            hue: 0.0,
            saturation: 1.0,
            blend: -1.0,
            intensity: 1.0,
            shine: 0.0,
        }
    }
}

/// Exposure, brightness, contrast, gamma, then hue shift and saturation
/// scaling in HSV.
pub fn recolor_swatch(swatch: &Image, p: &HairParams) -> Image {
    let (e, b, k, gamma, s) = (
        p.exposure as f32,
        p.brightness as f32,
        p.contrast as f32,
        p.gamma as f32,
        p.saturation as f32,
    );
    let shift = (p.hue.rem_euclid(1.0)) as f32;
    let mut out = swatch.clone();
    for i in 0..swatch.num_pixels() {
        let rgb = swatch.pixel(i).map(|v| {
            let v = ((v * e + b - 0.5) * k + 0.5).clamp(0.0, 1.0);
            if gamma == 1.0 {
                v
            } else {
                v.powf(gamma)
            }
        });
        let rgb = if shift == 0.0 && s == 1.0 {
            rgb
        } else {
            let [h, sat, val] = rgb_to_hsv(rgb);
            hsv_to_rgb([(h + shift).rem_euclid(1.0), (sat * s).clamp(0.0, 1.0), val])
        };
        out.set_pixel(i, rgb.map(|v| v.clamp(0.0, 1.0)));
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let w: Vec<f32> = (-radius..=radius)
        .map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn blur_separable(values: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += w * values[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += w * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Gaussian blur of `values` restricted to `inside` (normalized convolution).
pub fn masked_blur(values: &[f32], inside: &[bool], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let masked: Vec<f32> = values
        .iter()
        .zip(inside)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let weights: Vec<f32> = inside.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let num = blur_separable(&masked, width, height, &kernel);
    let den = blur_separable(&weights, width, height, &kernel);
    num.iter()
        .zip(&den)
        .zip(values)
        .map(|((&n, &d), &v)| if d > 1e-6 { n / d } else { v })
        .collect()
}

/// Fade weight of a row: 0 above the ramp, 1 from the offset row down.
pub fn fade_weight(row: usize, y0: usize, y1: usize, blend: f64) -> f32 {
    let h = (y1 - y0) as f64;
    let y_star = y0 as f64 + (blend + 1.0) / 2.0 * h;
    let width = (0.1 * h).max(1e-6);
    let yc = row as f64 + 0.5;
    let t = ((yc - (y_star - width)) / width).clamp(0.0, 1.0);
    (t * t * (3.0 - 2.0 * t)) as f32
}

pub fn render_hair(scene: &Scene, swatch: &Image, p: &HairParams) -> Result<Image> {
    let Some(bbox) = scene.hair_bbox else {
        return Ok(scene.image.clone());
    };
    if swatch.width < 8 || swatch.height < 8 {
        return Err(Error::data("swatch must be at least 8x8"));
    }
    let (w, h) = (scene.width(), scene.height());
    let inside: Vec<bool> = (0..w * h).map(|i| scene.hair_mask.is_inside(i)).collect();
    let idx: Vec<usize> = (0..w * h).filter(|&i| inside[i]).collect();
    let x = &scene.image;

    let target = extract_histograms(&recolor_swatch(swatch, p), None)?;
    let mut colored = x.clone();
    let iota = p.intensity as f32;
    for c in 0..3 {
        let src: Vec<f32> = idx.iter().map(|&i| x.data[3 * i + c]).collect();
        let matched = histogram_match(&src, target.channel(c))?;
        for (&i, &m) in idx.iter().zip(&matched) {
            let o = x.data[3 * i + c];
            colored.data[3 * i + c] = o + iota * (m - o);
        }
    }

    let sigma = p.shine as f32;
    let mut effect = colored.clone();
    if sigma > 0.0 {
        let lum = colored.luminance();
        let blurred = masked_blur(&lum, &inside, w, h, (bbox.height() as f32 / 16.0).max(0.5));
        let local: Vec<f32> = idx
            .iter()
            .map(|&i| lum[i] + sigma * 1.5 * (lum[i] - blurred[i]))
            .collect();
        let mu = local.iter().map(|&v| v as f64).sum::<f64>() / local.len() as f64;
        let gain = 1.0 + 0.3 * sigma as f64;
        for (&i, &l1) in idx.iter().zip(&local) {
            let l2 = ((l1 as f64 - mu) * gain + mu) as f32;
            let shift = l2 - lum[i];
            let px = colored.pixel(i);
            effect.set_pixel(i, px.map(|v| (v + shift).clamp(0.0, 1.0)));
        }
    }

    let mut out = x.clone();
    for &i in &idx {
        let wgt = fade_weight(i / w, bbox.y0, bbox.y1, p.blend);
        if wgt == 0.0 {
            continue;
        }
        let o = x.pixel(i);
        let e = effect.pixel(i);
        out.set_pixel(i, std::array::from_fn(|c| (o[c] + wgt * (e[c] - o[c])).clamp(0.0, 1.0)));
    }
    Ok(out)
}

/// Procedural mid-brown swatch with vertical strands, `height × width`.
pub fn synthetic_swatch(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f32> = (0..width).map(|_| rng.random_range(-0.06..0.06)).collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let t = y as f32 / (height - 1).max(1) as f32;
        for (x, &ph) in phases.iter().enumerate() {
            let strand = 0.08 * (x as f32 * 1.7).sin() + ph + rng.random_range(-0.02..0.02);
            let base = 0.42 - 0.16 * t + strand;
            data.extend([base * 1.0, base * 0.72, base * 0.48].map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Image::new(width, height, data)
}

/// Mean luminance of the hair region of `img`.
pub fn mean_hair_luminance(scene: &Scene, img: &Image) -> Option<f64> {
    let idx: Vec<usize> = (0..img.num_pixels()).filter(|&i| scene.hair_mask.is_inside(i)).collect();
    (!idx.is_empty()).then(|| idx.iter().map(|&i| luma(img.pixel(i)) as f64).sum::<f64>() / idx.len() as f64)
}
