//! Self-supervised training data: sampled graphics vectors rendered on
//! randomly chosen scenes.
//!
//! On disk: `{out}/images/{i:06}.png`, `{out}/scenes/{id}/...` and
//! `{out}/manifest.json`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::image::Image;
use crate::renderer::Renderer;
use crate::sampler::{Sampler, SamplerConfig};
use crate::scene::{crop_to_region, load_scene_dirs, Region, Scene};
use crate::schema::RendererId;

/// How scenes are turned into network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// Crop around this region first; `None` resizes the whole scene.
    pub region: Option<Region>,
    pub margin_frac: f64,
    pub width: usize,
    pub height: usize,
}

impl InputSpec {
    /// Lips crops at 64×64; whole hair scenes at 96×96.
    pub fn default_for(renderer: RendererId) -> Self {
        match renderer {
            RendererId::Lipstick => Self {
                region: Some(Region::Lips),
                margin_frac: 0.5,
                width: 64,
                height: 64,
            },
            RendererId::Hair => Self {
                region: None,
                margin_frac: 0.5,
                width: 96,
                height: 96,
            },
        }
    }

    pub fn prepare(&self, scene: &Scene) -> Result<Scene> {
        match self.region {
            Some(r) => crop_to_region(scene, r, self.margin_frac, Some((self.width, self.height))),
            None if scene.width() == self.width && scene.height() == self.height => Ok(scene.clone()),
            None => Ok(scene.resized(self.width, self.height)),
        }
    }

    /// Prepared and rounded to 8-bit levels, so in-memory data equals what a
    /// disk round trip returns.
    pub fn prepare_quantized(&self, scene: &Scene) -> Result<Scene> {
        Ok(self.prepare(scene)?.quantized())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene_id: String,
    /// Physical parameter values in schema order.
    pub g: Vec<f64>,
    pub rendered_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub renderer_id: RendererId,
    pub schema_hash: String,
    pub seed: u64,
    pub n: usize,
    pub input: InputSpec,
    pub sampler: SamplerConfig,
    pub scene_ids: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::data(format!("manifest JSON: {e}")))?;
        if m.n != m.entries.len() {
            return Err(Error::data(format!(
                "manifest declares n={} but lists {} entries",
                m.n,
                m.entries.len()
            )));
        }
        Ok(m)
    }
}

/// One training example: scene index into [`TrainingSet::scenes`], the
/// normalized graphics vector and the renderer output.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub g_norm: Vec<f64>,
    pub target: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub renderer_id: RendererId,
    pub input: InputSpec,
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `n_test` samples.
    pub fn split(mut self, n_test: usize) -> (TrainingSet, TrainingSet) {
        let n_test = n_test.min(self.samples.len());
        let test_samples = self.samples.split_off(self.samples.len() - n_test);
        let test = TrainingSet {
            samples: test_samples,
            ..self.clone()
        };
        (self, test)
    }
}

/// Samples `n` graphics vectors, pairs each with a scene drawn uniformly and
/// renders it. `scenes` must already be prepared (see [`InputSpec`]).
/// Writes the dataset to `out_dir` when given.
pub fn build_dataset(
    renderer: &Renderer,
    scenes: &[Scene],
    input: &InputSpec,
    sampler_cfg: &SamplerConfig,
    n: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(DatasetManifest, TrainingSet)> {
    if scenes.is_empty() {
        return Err(Error::data("dataset needs at least one scene"));
    }
    for (i, s) in scenes.iter().enumerate() {
        if scenes[..i].iter().any(|o| o.id == s.id) {
            return Err(Error::data(format!("duplicate scene id {}", s.id)));
        }
    }
    let scenes: Vec<Scene> = scenes.iter().map(Scene::quantized).collect();
    let scenes = scenes.as_slice();
    let schema = &renderer.schema;
    let mut cfg = sampler_cfg.clone();
    cfg.seed = seed;
    let mut sampler = Sampler::new(&cfg, schema)?;
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A_5E7);
    let mut entries = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut skipped = 0;
    for i in 0..n {
        let u = sampler.next_normalized();
        let si = pick.random_range(0..scenes.len());
        let scene = &scenes[si];
        let (g, _) = schema.denormalize(&u)?;
        let rendered = renderer
            .check_scene(scene)
            .and_then(|_| renderer.render(scene, &g));
        let img = match rendered {
            Ok(img) => img.quantized(),
            Err(e) => {
                log::warn!("entry {i}: scene {}: {e}; skipped", scene.id);
                skipped += 1;
                continue;
            }
        };
        let rendered_path = format!("images/{:06}.png", entries.len());
        if let Some(dir) = out_dir {
            img.save(&dir.join(&rendered_path))?;
        }
        entries.push(ManifestEntry {
            scene_id: scene.id.clone(),
            g: g.values.clone(),
            rendered_path,
        });
        samples.push(Sample {
            scene: si,
            g_norm: schema.normalize(&g)?,
            target: img,
        });
    }
    if n > 0 && skipped * 100 > n {
        return Err(Error::data(format!("{skipped} of {n} renders failed")));
    }
    let manifest = DatasetManifest {
        renderer_id: renderer.id(),
        schema_hash: schema.hash(),
        seed,
        n: entries.len(),
        input: input.clone(),
        sampler: cfg,
        scene_ids: scenes.iter().map(|s| s.id.clone()).collect(),
        entries,
        skipped,
    };
    if let Some(dir) = out_dir {
        for s in scenes {
            s.save_dir(&dir.join("scenes").join(&s.id))?;
        }
        write_file(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("serializes").as_bytes(),
        )?;
    }
    let set = TrainingSet {
        renderer_id: renderer.id(),
        input: input.clone(),
        scenes: scenes.to_vec(),
        samples,
    };
    Ok((manifest, set))
}

/// Reads a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, TrainingSet)> {
    let path = dir.join("manifest.json");
    let bytes = read_file(&path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::decode(&path, e))?;
    let manifest = DatasetManifest::from_json(text).map_err(|e| Error::decode(&path, e))?;
    let schema = crate::schema::load_schema(manifest.renderer_id);
    if schema.hash() != manifest.schema_hash {
        return Err(Error::data("dataset was built with a different schema"));
    }
    let loaded = load_scene_dirs(&dir.join("scenes"))?;
    let scenes: Vec<Scene> = manifest
        .scene_ids
        .iter()
        .map(|id| {
            loaded
                .iter()
                .find(|s| &s.id == id)
                .cloned()
                .ok_or_else(|| Error::data(format!("dataset scene {id} is missing")))
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let scene = manifest
            .scene_ids
            .iter()
            .position(|id| id == &e.scene_id)
            .ok_or_else(|| Error::data(format!("entry refers to unknown scene {}", e.scene_id)))?;
        if e.rendered_path.contains("..") || Path::new(&e.rendered_path).is_absolute() {
            return Err(Error::data(format!("rendered path {:?} escapes the dataset", e.rendered_path)));
        }
        let g = crate::schema::GraphicsVector::new(manifest.renderer_id, e.g.clone());
        samples.push(Sample {
            scene,
            g_norm: schema.normalize(&g)?,
            target: Image::load(&dir.join(&e.rendered_path))?,
        });
    }
    let set = TrainingSet {
        renderer_id: manifest.renderer_id,
        input: manifest.input.clone(),
        scenes,
        samples,
    };
    Ok((manifest, set))
}
