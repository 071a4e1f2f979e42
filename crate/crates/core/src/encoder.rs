//! Inverse-graphics encoder: reference image to renderer parameters.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tryon_tensor::{no_grad, Adam, AdamConfig, ParamStore, Tensor, Var};

use crate::checkpoint::{load_meta, load_weights, save_meta, save_weights, weights_hash};
use crate::dataset::{InputSpec, TrainingSet};
use crate::error::{write_file, Error, Result};
use crate::image::{images_to_tensor, Image};
use crate::imitator::Imitator;
use crate::losses::{graphics_loss, rendering_loss, vectors_tensor};
use crate::nets::{EncoderArch, EncoderNet};
use crate::perceptual::FeatureEncoder;
use crate::scene::Scene;
use crate::schema::{load_schema, params_document, GraphicsVector, ParameterSchema, RendererId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderLossMode {
    GraphicsOnly,
    RenderingOnly,
    Both,
}

impl EncoderLossMode {
    pub fn uses_graphics(self) -> bool {
        self != EncoderLossMode::RenderingOnly
    }

    pub fn uses_rendering(self) -> bool {
        self != EncoderLossMode::GraphicsOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderTrainConfig {
    /// Weight of the rendering loss.
    pub lambda3: f32,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
    pub width: usize,
    pub mode: EncoderLossMode,
    /// Seed of the random perceptual feature encoder used for training.
    pub feature_seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            lambda3: 20.0,
            batch: 16,
            epochs: 30,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            width: 32,
            mode: EncoderLossMode::Both,
            feature_seed: 7,
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda3 >= 0.0 && self.batch > 0 && self.lr > 0.0 && self.width > 0) {
            return Err(Error::data("encoder config: lambda3 must be >= 0, batch, lr and width > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderEpoch {
    pub epoch: usize,
    pub graphics: f64,
    pub rendering: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderMeta {
    pub kind: String,
    pub renderer_id: RendererId,
    pub schema_hash: String,
    pub input: InputSpec,
    pub arch: EncoderArch,
    pub cfg: EncoderTrainConfig,
    pub epoch: usize,
    pub loss_history: Vec<EncoderEpoch>,
    /// Weights hash of the imitator used for the rendering loss.
    pub imitator_weights: Option<String>,
    /// Weights hash of the encoder training started from, if not fresh.
    pub init_weights: Option<String>,
}

/// Per-parameter estimate for one or more reference images.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeResult {
    pub g: GraphicsVector,
    pub normalized: Vec<f64>,
}

/// `{renderer_id, params, normalized}` as emitted by the CLI and the service.
pub fn encode_json(schema: &ParameterSchema, r: &EncodeResult) -> String {
    let mut doc = params_document(schema, &r.g);
    doc["normalized"] = serde_json::to_value(&r.normalized).expect("finite values");
    let mut s = serde_json::to_string_pretty(&doc).expect("serializes");
    s.push('\n');
    s
}

/// Median of a non-empty list; mean of the two middle values when even.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct Encoder {
    pub schema: ParameterSchema,
    pub input: InputSpec,
    pub net: EncoderNet,
    pub params: ParamStore,
}

impl Encoder {
    pub fn new(renderer: RendererId, input: InputSpec, arch: EncoderArch, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = EncoderNet::new(arch, &mut params, &mut rng);
        Self {
            schema: load_schema(renderer),
            input,
            net,
            params,
        }
    }

    /// Raw head outputs `[N, m]` for images at the input resolution.
    pub fn predict_raw(&self, x: &Tensor) -> Tensor {
        let _ng = no_grad();
        let p = self.params.bind(false);
        self.net.forward(&p, &Var::constant(x.clone())).value().clone()
    }

    /// Image prepared for the encoder: resized if not at input resolution.
    pub fn prepare_image(&self, img: &Image) -> Image {
        if img.width == self.input.width && img.height == self.input.height {
            img.clone()
        } else {
            img.resize(self.input.width, self.input.height)
        }
    }

    /// Reference taken from a scene whose image shows the look: cropped and
    /// resized as during training.
    pub fn prepare_reference(&self, scene: &Scene) -> Result<Image> {
        Ok(self.input.prepare(scene)?.image)
    }

    /// Normalized predictions clipped to `[0, 1]`, one per image.
    pub fn predict(&self, images: &[&Image]) -> Vec<Vec<f64>> {
        if images.is_empty() {
            return Vec::new();
        }
        let prepared: Vec<Image> = images.iter().map(|i| self.prepare_image(i)).collect();
        let raw = self.predict_raw(&images_to_tensor(&prepared.iter().collect::<Vec<_>>()));
        raw.data()
            .chunks(self.schema.m())
            .map(|row| row.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect())
            .collect()
    }

    /// Per-dimension median of the clipped predictions, denormalized.
    pub fn encode_reference(&self, images: &[&Image]) -> Result<EncodeResult> {
        if images.is_empty() {
            return Err(Error::data("encode needs at least one reference image"));
        }
        let preds = self.predict(images);
        let normalized: Vec<f64> = (0..self.schema.m())
            .map(|j| median(&preds.iter().map(|p| p[j]).collect::<Vec<_>>()))
            .collect();
        let (g, _) = self.schema.denormalize(&normalized)?;
        Ok(EncodeResult { g, normalized })
    }
}

pub struct EncoderCheckpoint {
    pub encoder: Encoder,
    pub meta: EncoderMeta,
}

impl EncoderCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_weights(dir, "encoder.tryt", &self.encoder.params)?;
        save_meta(dir, &self.meta)?;
        write_file(&dir.join("losses.csv"), encoder_losses_csv(&self.meta.loss_history).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: EncoderMeta = load_meta(dir)?;
        if meta.kind != "encoder" {
            return Err(Error::data(format!("{} holds a {} checkpoint", dir.display(), meta.kind)));
        }
        if load_schema(meta.renderer_id).hash() != meta.schema_hash {
            return Err(Error::data("encoder checkpoint schema hash does not match"));
        }
        let mut encoder = Encoder::new(meta.renderer_id, meta.input.clone(), meta.arch.clone(), 0);
        load_weights(dir, "encoder.tryt", &mut encoder.params)?;
        Ok(Self { encoder, meta })
    }
}

pub fn encoder_losses_csv(history: &[EncoderEpoch]) -> String {
    let mut s = String::from("epoch,graphics,rendering,total\n");
    for e in history {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.graphics, e.rendering, e.total));
    }
    s
}

/// Minimizes `graphics + λ3·rendering` (or one of the two) over the
/// dataset renders. The imitator is frozen and only needed when the
/// rendering loss is used. `init` continues from an existing encoder.
pub fn train_encoder(
    set: &TrainingSet,
    imitator: Option<&Imitator>,
    cfg: &EncoderTrainConfig,
    init: Option<&EncoderCheckpoint>,
    progress: &mut dyn FnMut(&EncoderEpoch),
) -> Result<EncoderCheckpoint> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::data("encoder training needs a non-empty dataset"));
    }
    let schema = load_schema(set.renderer_id);
    let imitator = if cfg.mode.uses_rendering() {
        let imi = imitator.ok_or_else(|| Error::data("rendering loss needs an imitator checkpoint"))?;
        if imi.schema.renderer_id != set.renderer_id || imi.schema.hash() != schema.hash() {
            return Err(Error::data("imitator schema does not match the dataset"));
        }
        if imi.input != set.input {
            return Err(Error::data("imitator input spec does not match the dataset"));
        }
        Some(imi)
    } else {
        None
    };
    let (mut encoder, init_weights) = match init {
        Some(ck) => {
            if ck.meta.renderer_id != set.renderer_id || ck.meta.input != set.input {
                return Err(Error::data("initial encoder does not match the dataset"));
            }
            let mut e = Encoder::new(set.renderer_id, set.input.clone(), ck.meta.arch.clone(), 0);
            e.params = ck.encoder.params.clone();
            (e, Some(weights_hash(&ck.encoder.params)))
        }
        None => {
            let arch = EncoderArch {
                m: schema.m(),
                width: cfg.width,
            };
            (Encoder::new(set.renderer_id, set.input.clone(), arch, cfg.seed), None)
        }
    };
    let features = FeatureEncoder::seeded_random(cfg.feature_seed);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    });
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut shuffle);
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let real = images_to_tensor(&chunk.iter().map(|&i| &set.samples[i].target).collect::<Vec<_>>());
            let g = vectors_tensor(&chunk.iter().map(|&i| set.samples[i].g_norm.clone()).collect::<Vec<_>>());
            let p = encoder.params.bind(true);
            let real_v = Var::constant(real);
            let pred = encoder.net.forward(&p, &real_v);
            let l_g = graphics_loss(&pred, &Var::constant(g))?;
            let l_r = match imitator {
                Some(imi) => {
                    let x = images_to_tensor(
                        &chunk
                            .iter()
                            .map(|&i| &set.scenes[set.samples[i].scene].image)
                            .collect::<Vec<_>>(),
                    );
                    let ip = imi.params.bind(false);
                    let imitated = imi.net.forward(&ip, &Var::constant(x), &pred);
                    Some(rendering_loss(&features, &real_v, &imitated)?)
                }
                None => None,
            };
            let total = match (&l_r, cfg.mode.uses_graphics()) {
                (Some(r), true) => l_g.add(&r.scale(cfg.lambda3)),
                (Some(r), false) => r.scale(cfg.lambda3),
                (None, _) => l_g.clone(),
            };
            let tv = total.item();
            if !tv.is_finite() {
                return Err(Error::Numeric(format!("encoder loss became {tv} in epoch {epoch}")));
            }
            let grads = p.gradients(&total);
            opt.step(&mut encoder.params, &grads);
            sums[0] += l_g.item() as f64;
            sums[1] += l_r.as_ref().map(|r| r.item() as f64).unwrap_or(0.0);
            sums[2] += tv as f64;
            batches += 1;
        }
        let b = batches as f64;
        let rec = EncoderEpoch {
            epoch: epoch + 1,
            graphics: sums[0] / b,
            rendering: sums[1] / b,
            total: sums[2] / b,
        };
        progress(&rec);
        history.push(rec);
    }
    let meta = EncoderMeta {
        kind: "encoder".into(),
        renderer_id: set.renderer_id,
        schema_hash: schema.hash(),
        input: set.input.clone(),
        arch: encoder.net.arch.clone(),
        cfg: cfg.clone(),
        epoch: init.map(|c| c.meta.epoch).unwrap_or(0) + cfg.epochs,
        loss_history: history,
        imitator_weights: imitator.map(|i| weights_hash(&i.params)),
        init_weights,
    };
    Ok(EncoderCheckpoint { encoder, meta })
}
