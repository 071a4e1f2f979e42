//! Differentiable imitator of a renderer and its adversarial training.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tryon_tensor::{io as tio, no_grad, Adam, AdamConfig, ParamStore, Tensor, Var};

use crate::checkpoint::{load_meta, load_weights, save_meta, save_weights};
use crate::dataset::{InputSpec, TrainingSet};
use crate::error::{write_file, Error, Result};
use crate::image::{images_to_tensor, tensor_to_images, Image};
use crate::losses::{
    critic_loss, generator_adversarial, imitation_loss, perturbed_vectors, sensitivity_loss_from_outputs,
    vectors_tensor, Perturbation,
};
use crate::nets::{CriticArch, CriticNet, GeneratorArch, GeneratorNet};
use crate::perceptual::FeatureEncoder;
use crate::renderer::Renderer;
use crate::scene::Scene;
use crate::schema::{load_schema, GraphicsVector, ParameterSchema, RendererId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImitatorTrainConfig {
    /// Weight of the imitation (perceptual) loss.
    pub lambda1: f32,
    /// Weight of the sensitivity loss; 0 trains with imitation and GAN only.
    pub lambda2: f32,
    pub lambda_gp: f32,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Resampled coordinates per sample for the sensitivity loss.
    pub sens_dims: usize,
    pub critic_steps: usize,
    pub seed: u64,
    pub width: usize,
    pub res_blocks: usize,
    pub critic_width: usize,
    pub zero_init_residual: bool,
    /// Seed of the random perceptual feature encoder used for training.
    pub feature_seed: u64,
}

impl Default for ImitatorTrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 1000.0,
            lambda_gp: 10.0,
            batch: 16,
            epochs: 30,
            lr: 5e-5,
            beta1: 0.5,
            beta2: 0.999,
            sens_dims: 2,
            critic_steps: 1,
            seed: 0,
            width: 32,
            res_blocks: 4,
            critic_width: 32,
            zero_init_residual: false,
            feature_seed: 7,
        }
    }
}

impl ImitatorTrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let positive = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.lambda_gp >= 0.0
            && self.batch > 0
            && self.lr > 0.0
            && self.width > 0
            && self.critic_width > 0;
        if !positive {
            return Err(Error::data("imitator config: weights must be >= 0, batch, lr and widths > 0"));
        }
        if self.sens_dims > m {
            return Err(Error::data(format!("sens_dims {} exceeds m = {m}", self.sens_dims)));
        }
        Ok(())
    }

    fn uses_sensitivity(&self) -> bool {
        self.lambda2 > 0.0 && self.sens_dims > 0
    }
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImitatorEpoch {
    pub epoch: usize,
    pub imitation: f64,
    pub sensitivity: f64,
    pub adversarial: f64,
    pub critic: f64,
    pub gradient_penalty: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImitatorMeta {
    pub kind: String,
    pub renderer_id: RendererId,
    pub schema_hash: String,
    pub input: InputSpec,
    pub generator: GeneratorArch,
    pub critic: CriticArch,
    pub cfg: ImitatorTrainConfig,
    pub epoch: usize,
    pub loss_history: Vec<ImitatorEpoch>,
}

/// Generator with its weights; the differentiable surrogate of a renderer.
pub struct Imitator {
    pub schema: ParameterSchema,
    pub input: InputSpec,
    pub net: GeneratorNet,
    pub params: ParamStore,
}

impl Imitator {
    pub fn new(renderer: RendererId, input: InputSpec, arch: GeneratorArch, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let net = GeneratorNet::new(arch, &mut params, rng);
        Self {
            schema: load_schema(renderer),
            input,
            net,
            params,
        }
    }

    /// Generator output for a batch without recording a graph.
    pub fn imitate_batch(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        self.net.check_input(x.shape(), g.shape())?;
        let _ng = no_grad();
        let p = self.params.bind(false);
        Ok(self
            .net
            .forward(&p, &Var::constant(x.clone()), &Var::constant(g.clone()))
            .value()
            .clone())
    }

    /// Imitates on an already prepared scene from normalized coordinates.
    pub fn imitate_normalized(&self, scene: &Scene, u: &[f64]) -> Result<Image> {
        if u.len() != self.schema.m() {
            return Err(Error::Dimension {
                expected: self.schema.m(),
                got: u.len(),
            });
        }
        let x = images_to_tensor(&[&scene.image]);
        let g = vectors_tensor(&[u.to_vec()]);
        Ok(tensor_to_images(&self.imitate_batch(&x, &g)?).remove(0))
    }

    /// Prepares the scene like the training data, then imitates `g`.
    pub fn imitate(&self, scene: &Scene, g: &GraphicsVector) -> Result<Image> {
        if g.renderer_id != self.schema.renderer_id {
            return Err(Error::data(format!(
                "imitator for {} given {} parameters",
                self.schema.renderer_id, g.renderer_id
            )));
        }
        let u = self.schema.normalize(g)?;
        let prepared = self.input.prepare(scene)?;
        self.imitate_normalized(&prepared, &u)
    }
}

/// Trained imitator with its critic and training record.
pub struct ImitatorCheckpoint {
    pub imitator: Imitator,
    pub critic: CriticNet,
    pub critic_params: ParamStore,
    pub meta: ImitatorMeta,
}

impl ImitatorCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_weights(dir, "generator.tryt", &self.imitator.params)?;
        save_weights(dir, "critic.tryt", &self.critic_params)?;
        save_meta(dir, &self.meta)?;
        write_file(&dir.join("losses.csv"), imitator_losses_csv(&self.meta.loss_history).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ImitatorMeta = load_meta(dir)?;
        if meta.kind != "imitator" {
            return Err(Error::data(format!("{} holds a {} checkpoint", dir.display(), meta.kind)));
        }
        let schema = load_schema(meta.renderer_id);
        if schema.hash() != meta.schema_hash {
            return Err(Error::data("imitator checkpoint schema hash does not match"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut imitator = Imitator::new(meta.renderer_id, meta.input.clone(), meta.generator.clone(), &mut rng);
        load_weights(dir, "generator.tryt", &mut imitator.params)?;
        let mut critic_params = ParamStore::new();
        let critic = CriticNet::new(meta.critic.clone(), &mut critic_params, &mut rng);
        load_weights(dir, "critic.tryt", &mut critic_params)?;
        Ok(Self {
            imitator,
            critic,
            critic_params,
            meta,
        })
    }
}

pub fn imitator_losses_csv(history: &[ImitatorEpoch]) -> String {
    let mut s = String::from("epoch,imitation,sensitivity,adversarial,critic,gradient_penalty,total\n");
    for e in history {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.imitation, e.sensitivity, e.adversarial, e.critic, e.gradient_penalty, e.total
        ));
    }
    s
}

/// Renders keyed by scene id and the exact bits of the normalized vector,
/// optionally persisted under a directory.
pub struct RenderCache {
    mem: HashMap<(String, Vec<u64>), Image>,
    dir: Option<PathBuf>,
    capacity: usize,
}

impl RenderCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            mem: HashMap::new(),
            dir,
            capacity: 4096,
        }
    }

    /// Uses the directory named by `INVERSE_TRYON_CACHE`, if set.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os("INVERSE_TRYON_CACHE").map(PathBuf::from))
    }

    fn file_name(renderer: &Renderer, scene_id: &str, u: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(renderer.id().as_str());
        h.update(renderer.schema.hash());
        if let Some(s) = renderer.swatch() {
            for v in &s.data {
                h.update(v.to_le_bytes());
            }
        }
        h.update(scene_id.as_bytes());
        for v in u {
            h.update(v.to_le_bytes());
        }
        format!("{}.tryt", hex::encode(h.finalize()))
    }

    /// 8-bit quantized render of `u` on a prepared scene.
    pub fn render(&mut self, renderer: &Renderer, scene: &Scene, u: &[f64]) -> Result<Image> {
        let key = (scene.id.clone(), u.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(img) = self.mem.get(&key) {
            return Ok(img.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(Self::file_name(renderer, &scene.id, u)));
        let cached = path.as_ref().and_then(|p| {
            let bytes = std::fs::read(p).ok()?;
            let t = tio::decode(&bytes).ok()?.pop()?.1;
            (t.shape() == [scene.height(), scene.width(), 3])
                .then(|| Image::new(scene.width(), scene.height(), t.to_vec()))
        });
        let img = match cached {
            Some(img) => img,
            None => {
                let img = renderer.render_normalized(scene, u)?.quantized();
                if let Some(p) = &path {
                    let t = Tensor::new(&[img.height, img.width, 3], img.data.clone());
                    if let Err(e) = write_file(p, &tio::encode([("image", &t)])) {
                        log::warn!("render cache write failed: {e}");
                    }
                }
                img
            }
        };
        if self.mem.len() >= self.capacity {
            self.mem.clear();
        }
        self.mem.insert(key, img.clone());
        Ok(img)
    }
}

fn check_finite(name: &str, v: f32, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} loss became {v} in epoch {epoch}")))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// `k` distinct coordinates per sample, each resampled uniformly in `[0, 1]`;
/// ordered coordinate-round-major.
pub fn perturbation_plan(n: usize, m: usize, k: usize, rng: &mut impl Rng) -> Vec<Perturbation> {
    let picks: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut dims: Vec<usize> = (0..m).collect();
            dims.shuffle(rng);
            dims.truncate(k);
            dims
        })
        .collect();
    let mut plan = Vec::with_capacity(n * k);
    for r in 0..k {
        for (i, dims) in picks.iter().enumerate() {
            plan.push(Perturbation {
                sample: i,
                dim: dims[r],
                value: rng.random::<f64>(),
            });
        }
    }
    plan
}

/// Untrained imitator and critic exactly as training would start them.
pub fn init_imitator(set: &TrainingSet, cfg: &ImitatorTrainConfig) -> (Imitator, CriticNet, ParamStore) {
    let m = load_schema(set.renderer_id).m();
    let mut init = stream(cfg.seed, 0);
    let arch = GeneratorArch {
        m,
        width: cfg.width,
        res_blocks: cfg.res_blocks,
        zero_init_residual: cfg.zero_init_residual,
    };
    let imitator = Imitator::new(set.renderer_id, set.input.clone(), arch, &mut init);
    let mut critic_params = ParamStore::new();
    let critic = CriticNet::new(
        CriticArch {
            width: cfg.critic_width,
        },
        &mut critic_params,
        &mut init,
    );
    (imitator, critic, critic_params)
}

/// Alternating critic and generator updates minimizing
/// `λ1·imitation + λ2·sensitivity + adversarial` for the generator.
pub fn train_imitator(
    set: &TrainingSet,
    renderer: &Renderer,
    cfg: &ImitatorTrainConfig,
    cache: &mut RenderCache,
    progress: &mut dyn FnMut(&ImitatorEpoch),
) -> Result<ImitatorCheckpoint> {
    if set.is_empty() {
        return Err(Error::data("imitator training needs a non-empty dataset"));
    }
    if renderer.id() != set.renderer_id {
        return Err(Error::data("renderer does not match the dataset"));
    }
    let schema = load_schema(set.renderer_id);
    let m = schema.m();
    cfg.validate(m)?;
    let (mut imitator, critic, mut critic_params) = init_imitator(set, cfg);
    let features = FeatureEncoder::seeded_random(cfg.feature_seed);
    let adam = |beta1| AdamConfig {
        lr: cfg.lr,
        beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let mut opt_g = Adam::new(adam(cfg.beta1));
    let mut opt_d = Adam::new(adam(cfg.beta1));
    let mut shuffle_rng = stream(cfg.seed, 1);
    let mut gp_rng = stream(cfg.seed, 2);
    let mut plan_rng = stream(cfg.seed, 3);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 6];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let n = chunk.len();
            let scenes: Vec<&Scene> = chunk.iter().map(|&i| &set.scenes[set.samples[i].scene]).collect();
            let x = images_to_tensor(&scenes.iter().map(|s| &s.image).collect::<Vec<_>>());
            let g_rows: Vec<Vec<f64>> = chunk.iter().map(|&i| set.samples[i].g_norm.clone()).collect();
            let g = vectors_tensor(&g_rows);
            let real = images_to_tensor(&chunk.iter().map(|&i| &set.samples[i].target).collect::<Vec<_>>());

            // Critic.
            let mut critic_value = 0.0;
            let mut gp_value = 0.0;
            for _ in 0..cfg.critic_steps {
                let fake = imitator.imitate_batch(&x, &g)?;
                let u: Vec<f32> = (0..n).map(|_| gp_rng.random::<f32>()).collect();
                let cp = critic_params.bind(true);
                let (loss, gp) = critic_loss(&|v: &Var| critic.forward(&cp, v), &real, &fake, &u, cfg.lambda_gp)?;
                critic_value = loss.item();
                gp_value = gp;
                check_finite("critic", critic_value, epoch)?;
                let grads = cp.gradients(&loss);
                opt_d.step(&mut critic_params, &grads);
            }

            // Generator.
            let plan = if cfg.uses_sensitivity() {
                perturbation_plan(n, m, cfg.sens_dims, &mut plan_rng)
            } else {
                Vec::new()
            };
            let gp_rows = perturbed_vectors(&g_rows, &plan);
            let (x_all, g_all) = if plan.is_empty() {
                (x.clone(), g.clone())
            } else {
                let xp = Tensor::concat_batch(
                    &plan.iter().map(|p| x.slice_batch(p.sample, 1)).collect::<Vec<_>>(),
                );
                (
                    Tensor::concat_batch(&[x.clone(), xp]),
                    Tensor::concat_batch(&[g.clone(), vectors_tensor(&gp_rows)]),
                )
            };
            let gpb = imitator.params.bind(true);
            let out = imitator
                .net
                .forward(&gpb, &Var::constant(x_all), &Var::constant(g_all));
            let fake = out.narrow(0, 0, n);
            let real_v = Var::constant(real.clone());
            let l_im = imitation_loss(&features, &real_v, &fake)?;
            let l_sens = if plan.is_empty() {
                None
            } else {
                let r_pert: Vec<Image> = plan
                    .iter()
                    .zip(&gp_rows)
                    .map(|(p, v)| cache.render(renderer, scenes[p.sample], v))
                    .collect::<Result<_>>()?;
                let r_pert = images_to_tensor(&r_pert.iter().collect::<Vec<_>>());
                let i_pert = out.narrow(0, n, plan.len());
                Some(sensitivity_loss_from_outputs(&real, &r_pert, &fake, &i_pert, &plan)?)
            };
            let cpf = critic_params.bind(false);
            let l_adv = generator_adversarial(&critic.forward(&cpf, &fake));
            let mut total = l_im.scale(cfg.lambda1).add(&l_adv);
            if let Some(s) = &l_sens {
                total = total.add(&s.scale(cfg.lambda2));
            }
            let total_value = total.item();
            check_finite("generator", total_value, epoch)?;
            let grads = gpb.gradients(&total);
            opt_g.step(&mut imitator.params, &grads);

            let vals = [
                l_im.item() as f64,
                l_sens.as_ref().map(|s| s.item() as f64).unwrap_or(0.0),
                l_adv.item() as f64,
                critic_value as f64,
                gp_value as f64,
                total_value as f64,
            ];
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            batches += 1;
        }
        let b = batches as f64;
        let rec = ImitatorEpoch {
            epoch: epoch + 1,
            imitation: sums[0] / b,
            sensitivity: sums[1] / b,
            adversarial: sums[2] / b,
            critic: sums[3] / b,
            gradient_penalty: sums[4] / b,
            total: sums[5] / b,
        };
        progress(&rec);
        history.push(rec);
    }

    let meta = ImitatorMeta {
        kind: "imitator".into(),
        renderer_id: set.renderer_id,
        schema_hash: schema.hash(),
        input: set.input.clone(),
        generator: imitator.net.arch.clone(),
        critic: critic.arch.clone(),
        cfg: cfg.clone(),
        epoch: cfg.epochs,
        loss_history: history,
    };
    Ok(ImitatorCheckpoint {
        imitator,
        critic,
        critic_params,
        meta,
    })
}
