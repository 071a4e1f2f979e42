//! Lipstick: shading-preserving recolor of the lips followed by a gloss layer.

use crate::image::{luma, Image};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipstickParams {
    pub opacity: f64,
    /// RGB in `[0, 255]`.
    pub color: [f64; 3],
    pub gloss_amount: f64,
    pub gloss_roughness: f64,
    pub reflection_intensity: f64,
}

impl LipstickParams {
    /// From values in lipstick schema order.
    pub fn from_values(v: &[f64]) -> Self {
        assert_eq!(v.len(), 7, "lipstick vector has 7 entries");
        Self {
            opacity: v[0],
            color: [v[1], v[2], v[3]],
            gloss_amount: v[4],
            gloss_roughness: v[5],
            reflection_intensity: v[6],
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        vec![
            self.opacity,
            self.color[0],
            self.color[1],
            self.color[2],
            self.gloss_amount,
            self.gloss_roughness,
            self.reflection_intensity,
        ]
    }
}

fn lip_pixels(scene: &Scene) -> Vec<usize> {
    scene
        .lip_mask
        .data
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Mask-weighted mean luminance of the lips.
pub fn mean_lip_luminance(scene: &Scene) -> Option<f64> {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, &m) in scene.lip_mask.data.iter().enumerate() {
        if m > 0.0 {
            num += m as f64 * luma(scene.image.pixel(i)) as f64;
            den += m as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Illumination scale applied to the product color.
pub fn illumination_scale(mu: f64) -> f64 {
    (mu / 0.5).clamp(0.6, 1.4)
}

/// Replaces lip pixels by the product color shaded with the relative
/// luminance `L / mean(L)` of the source lips.
pub fn recolor_lips(scene: &Scene, p: &LipstickParams) -> Image {
    let mut out = scene.image.clone();
    let Some(mu) = mean_lip_luminance(scene) else {
        return out;
    };
    let s = illumination_scale(mu);
    let mu = mu.max(1e-6);
    let base: [f64; 3] = p.color.map(|c| c / 255.0 * s);
    for i in lip_pixels(scene) {
        let ratio = luma(scene.image.pixel(i)) as f64 / mu;
        out.set_pixel(i, base.map(|b| (b * ratio).clamp(0.0, 1.0) as f32));
    }
    out
}

/// Specular plus environment highlight driven by the normalized source
/// luminance of the lips.
pub fn apply_gloss(recolored: &Image, scene: &Scene, p: &LipstickParams) -> Image {
    let mut out = recolored.clone();
    let idx = lip_pixels(scene);
    if idx.is_empty() {
        return out;
    }
    let lum: Vec<f64> = idx.iter().map(|&i| luma(scene.image.pixel(i)) as f64).collect();
    let lmin = lum.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = lum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k = 2f64.powf(8.0 * (1.0 - p.gloss_roughness));
    for (&i, &l) in idx.iter().zip(&lum) {
        let ln = (l - lmin) / (lmax - lmin + 1e-6);
        let spec = (p.gloss_amount * ln.powf(k)).min(1.0);
        let env = p.reflection_intensity * 0.3 * ln;
        let add = spec + env;
        let c = recolored.pixel(i);
        out.set_pixel(i, c.map(|v| (v as f64 + add * (1.0 - v as f64)).clamp(0.0, 1.0) as f32));
    }
    out
}

/// Full lipstick render composited with opacity times the lip mask.
/// Pixels outside the mask are copied bit for bit.
pub fn render_lipstick(scene: &Scene, p: &LipstickParams) -> Image {
    let effect = apply_gloss(&recolor_lips(scene, p), scene, p);
    let mut out = scene.image.clone();
    let alpha = p.opacity as f32;
    for (i, &m) in scene.lip_mask.data.iter().enumerate() {
        if m > 0.0 {
            let a = alpha * m;
            let x = scene.image.pixel(i);
            let e = effect.pixel(i);
            out.set_pixel(i, std::array::from_fn(|c| (x[c] + a * (e[c] - x[c])).clamp(0.0, 1.0)));
        }
    }
    out
}
