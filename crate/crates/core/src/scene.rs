//! Portrait scenes: an image with lip and hair masks.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::image::{BBox, Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Lips,
    Hair,
}

/// How a scene was cut out of its source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropInfo {
    pub region: Region,
    pub margin_frac: f64,
    pub size: Option<(usize, usize)>,
    /// Rectangle of the source scene that was kept.
    pub source: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Image,
    pub lip_mask: Mask,
    pub hair_mask: Mask,
    pub lip_bbox: Option<BBox>,
    pub hair_bbox: Option<BBox>,
    pub crop: Option<CropInfo>,
}

impl Scene {
    pub fn new(id: impl Into<String>, image: Image, lip_mask: Mask, hair_mask: Mask) -> Result<Scene> {
        for (name, m) in [("lip", &lip_mask), ("hair", &hair_mask)] {
            if !image.same_size(m) {
                return Err(Error::data(format!(
                    "{name} mask is {}x{}, image is {}x{}",
                    m.width, m.height, image.width, image.height
                )));
            }
        }
        Ok(Scene {
            id: id.into(),
            lip_bbox: lip_mask.bbox(),
            hair_bbox: hair_mask.bbox(),
            image,
            lip_mask,
            hair_mask,
            crop: None,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn mask(&self, region: Region) -> &Mask {
        match region {
            Region::Lips => &self.lip_mask,
            Region::Hair => &self.hair_mask,
        }
    }

    pub fn bbox(&self, region: Region) -> Option<BBox> {
        match region {
            Region::Lips => self.lip_bbox,
            Region::Hair => self.hair_bbox,
        }
    }

    /// Scene with image and masks rounded to 8-bit levels, matching what a
    /// save/load round trip returns.
    pub fn quantized(&self) -> Scene {
        let mut s = self.clone();
        s.image = s.image.quantized();
        for m in [&mut s.lip_mask, &mut s.hair_mask] {
            for v in &mut m.data {
                *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        s.lip_bbox = s.lip_mask.bbox();
        s.hair_bbox = s.hair_mask.bbox();
        s
    }

    /// Same scene resampled to `width × height`.
    pub fn resized(&self, width: usize, height: usize) -> Scene {
        let mut s = Scene::new(
            self.id.clone(),
            self.image.resize(width, height),
            self.lip_mask.resize(width, height),
            self.hair_mask.resize(width, height),
        )
        .expect("resized consistently");
        s.crop = self.crop.clone();
        s
    }

    /// Writes `image.png`, `lip_mask.png`, `hair_mask.png` and `scene.json`
    /// into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.image.save(&dir.join("image.png"))?;
        self.lip_mask.save(&dir.join("lip_mask.png"))?;
        self.hair_mask.save(&dir.join("hair_mask.png"))?;
        let meta = SceneMeta {
            id: self.id.clone(),
            crop: self.crop.clone(),
        };
        write_file(
            &dir.join("scene.json"),
            serde_json::to_string_pretty(&meta).expect("serializes").as_bytes(),
        )
    }

    /// Reads a directory written by [`Scene::save_dir`]. Missing masks are
    /// empty; without `scene.json` the id is the directory name.
    pub fn load_dir(dir: &Path) -> Result<Scene> {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let mut scene = load_scene(
            &dir.join("image.png"),
            opt("lip_mask.png").as_deref(),
            opt("hair_mask.png").as_deref(),
        )?;
        let meta_path = dir.join("scene.json");
        if meta_path.exists() {
            let meta: SceneMeta = serde_json::from_slice(&read_file(&meta_path)?)
                .map_err(|e| Error::decode(&meta_path, e))?;
            scene.id = meta.id;
            scene.crop = meta.crop;
        } else if let Some(name) = dir.file_name() {
            scene.id = name.to_string_lossy().into_owned();
        }
        Ok(scene)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneMeta {
    id: String,
    #[serde(default)]
    crop: Option<CropInfo>,
}

/// Loads a portrait and its optional masks. The id is the image file stem.
pub fn load_scene(image_path: &Path, lip_mask: Option<&Path>, hair_mask: Option<&Path>) -> Result<Scene> {
    let image = Image::load(image_path)?;
    let load_mask = |p: Option<&Path>| -> Result<Mask> {
        match p {
            Some(p) => Mask::load(p),
            None => Ok(Mask::zeros(image.width, image.height)),
        }
    };
    let lip = load_mask(lip_mask)?;
    let hair = load_mask(hair_mask)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Scene::new(id, image, lip, hair)
}

/// Every scene directory under `root`, sorted by directory name.
pub fn load_scene_dirs(root: &Path) -> Result<Vec<Scene>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("image.png").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| Scene::load_dir(d)).collect()
}

/// Cuts out the box of `region` grown by `margin_frac` of its size (half on
/// each side), optionally resampled to `size`. Cropping an already cropped
/// scene with the same arguments returns it unchanged.
pub fn crop_to_region(
    scene: &Scene,
    region: Region,
    margin_frac: f64,
    size: Option<(usize, usize)>,
) -> Result<Scene> {
    if !(margin_frac.is_finite() && margin_frac >= 0.0) {
        return Err(Error::data(format!("margin_frac must be >= 0, got {margin_frac}")));
    }
    if let Some(c) = &scene.crop {
        if c.region == region && c.margin_frac == margin_frac && c.size == size {
            return Ok(scene.clone());
        }
    }
    let b = scene
        .bbox(region)
        .ok_or_else(|| Error::data(format!("scene {}: {region:?} mask is empty", scene.id)))?;
    let dx = margin_frac * b.width() as f64 / 2.0;
    let dy = margin_frac * b.height() as f64 / 2.0;
    let src = BBox {
        x0: (b.x0 as f64 - dx).floor().max(0.0) as usize,
        y0: (b.y0 as f64 - dy).floor().max(0.0) as usize,
        x1: ((b.x1 as f64 + dx).ceil() as usize).min(scene.width()),
        y1: ((b.y1 as f64 + dy).ceil() as usize).min(scene.height()),
    };
    let (mut image, mut lip, mut hair) = (
        scene.image.crop(src),
        scene.lip_mask.crop(src),
        scene.hair_mask.crop(src),
    );
    if let Some((w, h)) = size {
        image = image.resize(w, h);
        lip = lip.resize(w, h);
        hair = hair.resize(w, h);
    }
    let mut out = Scene::new(scene.id.clone(), image, lip, hair)?;
    out.crop = Some(CropInfo {
        region,
        margin_frac,
        size,
        source: src,
    });
    Ok(out)
}

fn inside_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let u = (x - cx) / rx;
    let v = (y - cy) / ry;
    u * u + v * v <= 1.0
}

fn jitter(rng: &mut ChaCha8Rng, v: f32, rel: f32) -> f32 {
    v * (1.0 + rng.random_range(-rel..=rel))
}

/// Deterministic procedural portrait of `size × size` pixels: a face
/// ellipse on a gradient background, two stacked lip ellipses with a bright
/// upper ridge, and a textured hair region around the top of the head.
pub fn generate_synthetic_scene(seed: u64, size: usize) -> Result<Scene> {
    if size < 32 {
        return Err(Error::data(format!("synthetic scene size must be >= 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5CE7E);
    let s = size as f32;

    let bg_top: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let bg_bottom: [f32; 3] = std::array::from_fn(|c| (bg_top[c] * rng.random_range(0.5..0.9)).min(1.0));
    let skin_scale = rng.random_range(0.55..1.05f32);
    let skin = [0.92 * skin_scale, 0.72 * skin_scale, 0.60 * skin_scale];
    let lip_base = [
        rng.random_range(0.55..0.80f32),
        rng.random_range(0.22..0.38f32),
        rng.random_range(0.25..0.40f32),
    ];
    let hair_scale = rng.random_range(0.25..1.0f32);
    let hair_base = [0.55 * hair_scale + 0.05, 0.38 * hair_scale + 0.04, 0.22 * hair_scale + 0.03];
    let strand_freq = rng.random_range(12.0..20.0f32);
    let strand_phase = rng.random_range(0.0..2.0 * PI);

    let (fcx, fcy) = (jitter(&mut rng, 0.5 * s, 0.03), jitter(&mut rng, 0.56 * s, 0.02));
    let (frx, fry) = (jitter(&mut rng, 0.27 * s, 0.05), jitter(&mut rng, 0.34 * s, 0.05));
    let (hcy, hrx, hry) = (fcy - 0.10 * s, frx * 1.35, fry * 1.22);
    let hair_bottom = fcy + 0.12 * s;
    let ly = fcy + 0.56 * fry;
    let upper = (fcx, ly - 0.024 * s, jitter(&mut rng, 0.12 * s, 0.08), jitter(&mut rng, 0.030 * s, 0.1));
    let lower = (fcx, ly + 0.026 * s, jitter(&mut rng, 0.11 * s, 0.08), jitter(&mut rng, 0.040 * s, 0.1));

    let n = size * size;
    let mut data = vec![0.0f32; 3 * n];
    let mut lip = vec![0.0f32; n];
    let mut hair = vec![0.0f32; n];
    for py in 0..size {
        for px in 0..size {
            let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
            let i = py * size + px;
            let t = y / s;
            let mut rgb: [f32; 3] = std::array::from_fn(|c| bg_top[c] * (1.0 - t) + bg_bottom[c] * t);
            let in_face = inside_ellipse(x, y, fcx, fcy, frx, fry);
            if in_face {
                let shade = 0.85 + 0.15 * (1.0 - ((x - fcx) / frx).powi(2));
                rgb = skin.map(|v| v * shade);
            } else if y < hair_bottom && inside_ellipse(x, y, fcx, hcy, hrx, hry) {
                let wave = (2.0 * PI * (x / s * strand_freq + 0.15 * (2.0 * PI * 2.0 * t + strand_phase).sin())).sin();
                let shade = 0.78 + 0.18 * wave + rng.random_range(-0.04..0.04f32);
                rgb = hair_base.map(|v| v * shade);
                hair[i] = 1.0;
            }
            for &(cx, cy, rx, ry) in &[upper, lower] {
                if in_face && inside_ellipse(x, y, cx, cy, rx, ry) {
                    let v = (y - (cy - ry)) / (2.0 * ry);
                    let ridge = (-((v - 0.25) / 0.18).powi(2)).exp();
                    let shade = 0.62 + 0.5 * ridge + rng.random_range(-0.02..0.02f32);
                    rgb = lip_base.map(|c| c * shade);
                    lip[i] = 1.0;
                }
            }
            for c in 0..3 {
                data[3 * i + c] = rgb[c].clamp(0.0, 1.0);
            }
        }
    }
    Scene::new(
        format!("synth-{seed:06}"),
        Image::new(size, size, data),
        Mask::new(size, size, lip),
        Mask::new(size, size, hair),
    )
}
