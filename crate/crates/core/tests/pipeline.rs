use tempfile::tempdir;
use tryon_core::checkpoint::weights_hash;
use tryon_core::dataset::{build_dataset, InputSpec, TrainingSet};
use tryon_core::encoder::{
    encode_json, median, train_encoder, Encoder, EncoderCheckpoint, EncoderLossMode, EncoderTrainConfig,
};
use tryon_core::image::{images_to_tensor, Image};
use tryon_core::imitator::{
    init_imitator, perturbation_plan, train_imitator, Imitator, ImitatorCheckpoint, ImitatorTrainConfig, RenderCache,
};
use tryon_core::nets::{EncoderArch, GeneratorArch};
use tryon_core::renderer::{default_swatch, Renderer};
use tryon_core::sampler::SamplerConfig;
use tryon_core::scene::{generate_synthetic_scene, Scene};
use tryon_core::schema::RendererId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tryon_tensor::{grad, Tensor, Var};

fn small_input() -> InputSpec {
    InputSpec { width: 32, height: 32, ..InputSpec::default_for(RendererId::Lipstick) }
}

fn dataset(n: usize) -> (Renderer, TrainingSet) {
    let r = Renderer::lipstick();
    let input = small_input();
    let scenes: Vec<Scene> = (0..3)
        .map(|i| input.prepare_quantized(&generate_synthetic_scene(40 + i, 96).unwrap()).unwrap())
        .collect();
    let (_, set) = build_dataset(&r, &scenes, &input, &SamplerConfig::uniform(&r.schema, 1), n, 2, None).unwrap();
    (r, set)
}

fn tiny_imitator(epochs: usize) -> ImitatorTrainConfig {
    ImitatorTrainConfig {
        epochs,
        batch: 4,
        width: 4,
        res_blocks: 1,
        critic_width: 4,
        lr: 1e-3,
        ..Default::default()
    }
}

fn tiny_encoder(epochs: usize, mode: EncoderLossMode) -> EncoderTrainConfig {
    EncoderTrainConfig { epochs, batch: 4, width: 4, lr: 1e-3, mode, ..Default::default() }
}

#[test]
fn zero_epochs_return_the_initialization() {
    let (r, set) = dataset(8);
    let cfg = tiny_imitator(0);
    let (init, _, critic_params) = init_imitator(&set, &cfg);
    let ck = train_imitator(&set, &r, &cfg, &mut RenderCache::new(None), &mut |_| {}).unwrap();
    assert_eq!(weights_hash(&ck.imitator.params), weights_hash(&init.params));
    assert_eq!(weights_hash(&ck.critic_params), weights_hash(&critic_params));
    assert!(ck.meta.loss_history.is_empty());
}

#[test]
fn imitator_training_is_deterministic_and_checkpoints_round_trip() {
    let (r, set) = dataset(8);
    let cfg = tiny_imitator(1);
    let mut seen = Vec::new();
    let a = train_imitator(&set, &r, &cfg, &mut RenderCache::new(None), &mut |e| seen.push(e.clone())).unwrap();
    let b = train_imitator(&set, &r, &cfg, &mut RenderCache::new(None), &mut |_| {}).unwrap();
    assert_eq!(seen.len(), 1);
    assert!(seen[0].imitation.is_finite() && seen[0].sensitivity >= 0.0);
    assert_eq!(weights_hash(&a.imitator.params), weights_hash(&b.imitator.params));
    let (init, _, _) = init_imitator(&set, &cfg);
    assert_ne!(weights_hash(&a.imitator.params), weights_hash(&init.params));

    let dir = tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = ImitatorCheckpoint::load(dir.path()).unwrap();
    assert_eq!(weights_hash(&back.imitator.params), weights_hash(&a.imitator.params));
    assert_eq!(weights_hash(&back.critic_params), weights_hash(&a.critic_params));
    assert_eq!(back.meta, a.meta);
    let csv = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(EncoderCheckpoint::load(dir.path()).is_err());

    let x = images_to_tensor(&[&set.scenes[0].image]);
    let g = Var::leaf(Tensor::new(&[1, 7], vec![0.5; 7]));
    let p = back.imitator.params.bind(false);
    let out = back.imitator.net.forward(&p, &Var::constant(x), &g);
    let dg = grad(&out.sum(), &[&g], false)[0].clone().unwrap();
    assert!(dg.value().data().iter().any(|&v| v != 0.0));
}

#[test]
fn imitator_rejects_bad_inputs() {
    let (r, set) = dataset(4);
    let mut cfg = tiny_imitator(1);
    cfg.sens_dims = 8;
    assert!(train_imitator(&set, &r, &cfg, &mut RenderCache::new(None), &mut |_| {}).is_err());
    let hair = Renderer::hair(default_swatch());
    assert!(train_imitator(&set, &hair, &tiny_imitator(1), &mut RenderCache::new(None), &mut |_| {}).is_err());
    let empty = TrainingSet { samples: Vec::new(), ..set.clone() };
    assert!(train_imitator(&empty, &r, &tiny_imitator(1), &mut RenderCache::new(None), &mut |_| {}).is_err());
}

#[test]
fn zero_residual_init_is_the_identity_and_shapes_follow_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (id, size) in [(RendererId::Lipstick, 64), (RendererId::Hair, 96)] {
        let input = InputSpec { width: size, height: size, ..InputSpec::default_for(id) };
        let m = tryon_core::schema::load_schema(id).m();
        let arch = GeneratorArch { m, width: 4, res_blocks: 1, zero_init_residual: true };
        let imi = Imitator::new(id, input, arch, &mut rng);
        let scene = generate_synthetic_scene(3, size).unwrap();
        let x = images_to_tensor(&[&scene.image]);
        let y = imi.imitate_batch(&x, &Tensor::full(&[1, m], 0.3)).unwrap();
        assert_eq!(y.shape(), &[1, 3, size, size]);
        assert_eq!(y, x);
        assert!(imi.imitate_batch(&x, &Tensor::full(&[1, m + 1], 0.3)).is_err());
        let arch = GeneratorArch::new(m);
        let imi = Imitator::new(id, InputSpec::default_for(id), GeneratorArch { width: 4, res_blocks: 1, ..arch }, &mut rng);
        let y = imi.imitate_batch(&x, &Tensor::full(&[1, m], 0.3)).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn perturbation_plans_pick_distinct_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let plan = perturbation_plan(5, 7, 3, &mut rng);
    assert_eq!(plan.len(), 15);
    for s in 0..5 {
        let mut dims: Vec<usize> = plan.iter().filter(|p| p.sample == s).map(|p| p.dim).collect();
        dims.sort();
        dims.dedup();
        assert_eq!(dims.len(), 3);
    }
    assert!(plan.iter().all(|p| (0.0..=1.0).contains(&p.value)));
}

#[test]
fn render_cache_matches_direct_renders() {
    let (r, set) = dataset(2);
    let dir = tempdir().unwrap();
    let scene = &set.scenes[0];
    let u = [0.1, 0.9, 0.2, 0.3, 0.4, 0.5, 0.6];
    let direct = r.render_normalized(scene, &u).unwrap().quantized();
    let mut c = RenderCache::new(Some(dir.path().to_path_buf()));
    assert_eq!(c.render(&r, scene, &u).unwrap(), direct);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let mut fresh = RenderCache::new(Some(dir.path().to_path_buf()));
    assert_eq!(fresh.render(&r, scene, &u).unwrap(), direct);
}

#[test]
fn median_examples() {
    assert_eq!(median(&[3.0]), 3.0);
    assert_eq!(median(&[0.4, 0.1, 0.9]), 0.4);
    assert_eq!(median(&[0.2, 0.6, 0.1, 0.8]), 0.4);
}

#[test]
fn encoder_zero_epochs_and_graphics_only_without_imitator() {
    let (_, set) = dataset(8);
    let cfg = tiny_encoder(0, EncoderLossMode::GraphicsOnly);
    let ck = train_encoder(&set, None, &cfg, None, &mut |_| {}).unwrap();
    let fresh = Encoder::new(RendererId::Lipstick, set.input.clone(), EncoderArch { width: 4, ..EncoderArch::new(7) }, 0);
    assert_eq!(weights_hash(&ck.encoder.params), weights_hash(&fresh.params));

    let cfg = tiny_encoder(2, EncoderLossMode::GraphicsOnly);
    let mut hist = Vec::new();
    let a = train_encoder(&set, None, &cfg, None, &mut |e| hist.push(e.clone())).unwrap();
    let b = train_encoder(&set, None, &cfg, None, &mut |_| {}).unwrap();
    assert_eq!(weights_hash(&a.encoder.params), weights_hash(&b.encoder.params));
    assert_eq!(hist.len(), 2);
    assert_eq!(hist[0].rendering, 0.0);
    assert!(train_encoder(&set, None, &tiny_encoder(1, EncoderLossMode::Both), None, &mut |_| {}).is_err());

    let dir = tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = EncoderCheckpoint::load(dir.path()).unwrap();
    assert_eq!(weights_hash(&back.encoder.params), weights_hash(&a.encoder.params));
    assert_eq!(back.meta, a.meta);
    assert!(ImitatorCheckpoint::load(dir.path()).is_err());

    let cont = train_encoder(&set, None, &tiny_encoder(1, EncoderLossMode::GraphicsOnly), Some(&back), &mut |_| {}).unwrap();
    assert_eq!(cont.meta.init_weights.as_deref(), Some(weights_hash(&a.encoder.params).as_str()));
}

#[test]
fn encoder_with_rendering_loss_and_reference_median() {
    let (r, set) = dataset(8);
    let imi = train_imitator(&set, &r, &tiny_imitator(1), &mut RenderCache::new(None), &mut |_| {}).unwrap();
    let ck = train_encoder(&set, Some(&imi.imitator), &tiny_encoder(1, EncoderLossMode::Both), None, &mut |_| {}).unwrap();
    assert!(ck.meta.loss_history[0].rendering > 0.0);
    assert_eq!(ck.meta.imitator_weights.as_deref(), Some(weights_hash(&imi.imitator.params).as_str()));

    let imgs: Vec<&Image> = set.samples.iter().take(3).map(|s| &s.target).collect();
    let res = ck.encoder.encode_reference(&imgs).unwrap();
    let rev: Vec<&Image> = imgs.iter().rev().copied().collect();
    assert_eq!(ck.encoder.encode_reference(&rev).unwrap(), res);
    let preds = ck.encoder.predict(&imgs);
    for j in 0..7 {
        assert_eq!(res.normalized[j], median(&preds.iter().map(|p| p[j]).collect::<Vec<_>>()));
    }
    assert!(ck.encoder.encode_reference(&[]).is_err());
    let big = set.scenes[0].image.resize(48, 48);
    assert_eq!(ck.encoder.predict(&[&big]).len(), 1);

    let doc: serde_json::Value = serde_json::from_str(&encode_json(&ck.encoder.schema, &res)).unwrap();
    assert_eq!(doc["renderer_id"], "lipstick");
    assert_eq!(doc["normalized"].as_array().unwrap().len(), 7);
    assert!(doc["params"]["opacity"].is_number());
}
