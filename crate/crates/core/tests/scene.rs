use tempfile::tempdir;
use tryon_core::dataset::{build_dataset, load_dataset, DatasetManifest, InputSpec};
use tryon_core::image::{BBox, Image, Mask};
use tryon_core::renderer::{render_lipstick, LipstickParams, Renderer};
use tryon_core::sampler::SamplerConfig;
use tryon_core::scene::{crop_to_region, generate_synthetic_scene, load_scene, Region, Scene};
use tryon_core::schema::RendererId;

fn scene(seed: u64) -> Scene {
    generate_synthetic_scene(seed, 64).unwrap()
}

#[test]
fn synthetic_lip_area_and_disjoint_masks() {
    let s = scene(1);
    let frac = s.lip_mask.count_inside() as f64 / (64.0 * 64.0);
    assert!((0.01..=0.10).contains(&frac), "lip area fraction {frac}");
    assert!(s.hair_mask.count_inside() > 0);
    for i in 0..64 * 64 {
        assert!(!(s.lip_mask.is_inside(i) && s.hair_mask.is_inside(i)));
    }
    assert!(s.lip_mask.data.iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(s.lip_bbox, s.lip_mask.bbox());
}

#[test]
fn synthetic_scenes_are_reproducible() {
    assert_eq!(scene(5), scene(5));
    assert_ne!(scene(5).image, scene(6).image);
    assert!(generate_synthetic_scene(1, 31).is_err());
}

#[test]
fn synthetic_lips_have_luminance_variation() {
    let s = scene(1);
    let lum = s.image.luminance();
    let inside: Vec<f32> = (0..lum.len()).filter(|&i| s.lip_mask.is_inside(i)).map(|i| lum[i]).collect();
    let lo = inside.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = inside.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    assert!(hi - lo > 0.1, "lip luminance spread {}", hi - lo);
}

#[test]
fn load_scene_with_missing_and_mismatched_masks() {
    let dir = tempdir().unwrap();
    let s = generate_synthetic_scene(3, 128).unwrap();
    let img = dir.path().join("portrait.png");
    let lip = dir.path().join("lip.png");
    s.image.save(&img).unwrap();
    s.lip_mask.save(&lip).unwrap();
    let loaded = load_scene(&img, Some(&lip), None).unwrap();
    assert_eq!(loaded.id, "portrait");
    assert!(loaded.hair_mask.is_empty());
    assert_eq!(loaded.hair_bbox, None);
    assert_eq!(loaded.lip_bbox, s.lip_bbox);
    let small = dir.path().join("small.png");
    Mask::zeros(64, 64).save(&small).unwrap();
    assert!(load_scene(&img, Some(&small), None).is_err());
    assert!(load_scene(&dir.path().join("absent.png"), None, None).is_err());
}

#[test]
fn empty_lip_mask_renders_unchanged() {
    let s = scene(2);
    let bare = Scene::new("bare", s.image.clone(), Mask::zeros(64, 64), s.hair_mask.clone()).unwrap();
    assert_eq!(bare.lip_bbox, None);
    let p = LipstickParams::from_values(&[1.0, 200.0, 30.0, 60.0, 5.0, 0.2, 1.0]);
    assert_eq!(render_lipstick(&bare, &p), bare.image);
}

#[test]
fn crop_rules() {
    let s = scene(1);
    let b = s.lip_bbox.unwrap();
    let tight = crop_to_region(&s, Region::Lips, 0.0, None).unwrap();
    assert_eq!((tight.width(), tight.height()), (b.width(), b.height()));
    assert_eq!(tight.image, s.image.crop(b));
    let c1 = crop_to_region(&s, Region::Lips, 0.5, Some((64, 64))).unwrap();
    let c2 = crop_to_region(&c1, Region::Lips, 0.5, Some((64, 64))).unwrap();
    assert_eq!(c1, c2);
    let src: BBox = c1.crop.unwrap().source;
    let before = s.lip_mask.crop(src).count_inside() as f64 / src.area() as f64;
    let after = c1.lip_mask.count_inside() as f64 / (64.0 * 64.0);
    assert!((after - before).abs() <= 0.05 * before, "mask ratio {before} -> {after}");
    let blank = Scene::new("blank", s.image.clone(), Mask::zeros(64, 64), Mask::zeros(64, 64)).unwrap();
    assert!(crop_to_region(&blank, Region::Lips, 0.5, None).is_err());
}

#[test]
fn scene_dir_round_trip() {
    let dir = tempdir().unwrap();
    let s = crop_to_region(&scene(4), Region::Lips, 0.5, Some((64, 64))).unwrap().quantized();
    s.save_dir(&dir.path().join("x")).unwrap();
    let back = Scene::load_dir(&dir.path().join("x")).unwrap();
    assert_eq!(back, s);
}

fn lip_scenes(n: u64) -> Vec<Scene> {
    let input = InputSpec::default_for(RendererId::Lipstick);
    (0..n).map(|i| input.prepare(&generate_synthetic_scene(i, 96).unwrap()).unwrap()).collect()
}

#[test]
fn dataset_is_deterministic_and_spreads_over_scenes() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let cfg = SamplerConfig::uniform(&r.schema, 0);
    let scenes = lip_scenes(10);
    let (d1, o1) = (tempdir().unwrap(), tempdir().unwrap());
    let (m1, s1) = build_dataset(&r, &scenes, &input, &cfg, 100, 9, Some(d1.path())).unwrap();
    let (m2, s2) = build_dataset(&r, &scenes, &input, &cfg, 100, 9, Some(o1.path())).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
    for e in &m1.entries {
        let a = std::fs::read(d1.path().join(&e.rendered_path)).unwrap();
        let b = std::fs::read(o1.path().join(&e.rendered_path)).unwrap();
        assert_eq!(a, b);
        assert!(r.schema.validate_values(&e.g).unwrap().is_empty());
    }
    let mut ids: Vec<_> = m1.entries.iter().map(|e| e.scene_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert!(ids.len() >= 5, "only {} distinct scenes", ids.len());
    let (m3, s3) = load_dataset(d1.path()).unwrap();
    assert_eq!(m3, m1);
    assert_eq!(s3, s1);
    let text = std::fs::read_to_string(d1.path().join("manifest.json")).unwrap();
    assert_eq!(DatasetManifest::from_json(&text).unwrap(), m1);
}

#[test]
fn empty_dataset_and_bad_inputs() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let cfg = SamplerConfig::uniform(&r.schema, 0);
    let (m, set) = build_dataset(&r, &lip_scenes(2), &input, &cfg, 0, 1, None).unwrap();
    assert_eq!(m.n, 0);
    assert!(m.entries.is_empty() && set.is_empty());
    assert!(build_dataset(&r, &[], &input, &cfg, 5, 1, None).is_err());
    let dup = vec![lip_scenes(1)[0].clone(), lip_scenes(1)[0].clone()];
    assert!(build_dataset(&r, &dup, &input, &cfg, 5, 1, None).is_err());
    let blank = Scene::new("blank", Image::filled(64, 64, [0.5; 3]), Mask::zeros(64, 64), Mask::zeros(64, 64)).unwrap();
    assert!(build_dataset(&r, &[blank], &input, &cfg, 10, 1, None).is_err());
}

#[test]
fn manifest_parser_rejects_inconsistent_counts() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let cfg = SamplerConfig::uniform(&r.schema, 0);
    let (mut m, _) = build_dataset(&r, &lip_scenes(2), &input, &cfg, 3, 1, None).unwrap();
    m.n = 4;
    assert!(DatasetManifest::from_json(&serde_json::to_string(&m).unwrap()).is_err());
    assert!(DatasetManifest::from_json("[]").is_err());
}
