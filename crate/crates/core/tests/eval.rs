use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tryon_core::dataset::InputSpec;
use tryon_core::eval::{
    ablation_report, fsum, mean_defined, mean_std, pearson, plan_transfer, psnr, sensitivity_correlation, ssim,
    summarize, transfer_experiment, Metrics, MetricsRecord, ABLATION_COLUMNS, PSNR_CAP,
};
use tryon_core::image::Image;
use tryon_core::perceptual::FeatureEncoder;
use tryon_core::renderer::Renderer;
use tryon_core::sampler::SamplerConfig;
use tryon_core::scene::{generate_synthetic_scene, Scene};
use tryon_core::schema::RendererId;

fn noisy(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| rng.random::<f32>()).collect())
}

#[test]
fn psnr_examples() {
    let x = noisy(1, 12, 12);
    assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    let a = Image::filled(4, 4, [0.5; 3]);
    let b = Image::filled(4, 4, [0.6; 3]);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    let (z, o) = (Image::filled(4, 4, [0.0; 3]), Image::filled(4, 4, [1.0; 3]));
    assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
    assert!(psnr(&z, &Image::filled(4, 5, [0.0; 3])).is_err());
}

#[test]
fn ssim_examples() {
    let x = noisy(2, 16, 14);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let (a, b) = (0.2f64, 0.8f64);
    let (c1, c2) = (1e-4, 9e-4);
    let want = (2.0 * a * b + c1) * c2 / ((a * a + b * b + c1) * c2);
    let got = ssim(&Image::filled(12, 12, [a as f32; 3]), &Image::filled(12, 12, [b as f32; 3])).unwrap();
    assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    let y = noisy(3, 16, 14);
    let (s1, s2) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    assert!((s1 - s2).abs() < 1e-12, "{s1} {s2}");
    assert!((-1.0..=1.0).contains(&s1), "{s1}");
    assert!(ssim(&noisy(1, 10, 20), &noisy(2, 10, 20)).is_err());
}

#[test]
fn statistics_helpers() {
    assert_eq!(fsum([1e16, 1.0, -1e16]), 1.0);
    assert_eq!(mean_std(&[]), None);
    assert_eq!(mean_std(&[3.0]), Some((3.0, 0.0)));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((m - 2.5).abs() < 1e-15 && (s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    let want = 4.5 / (2.0f64 * 61.0 / 6.0).sqrt();
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - want).abs() < 1e-12);
    assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
    assert_eq!(mean_defined(&[None, Some(1.0), Some(3.0)]), Some(2.0));
    assert_eq!(mean_defined(&[None, None]), None);
}

fn scenes(n: usize) -> Vec<Scene> {
    (0..n).map(|i| generate_synthetic_scene(100 + i as u64, 96).unwrap()).collect()
}

#[test]
fn oracle_encoder_transfer_is_perfect() {
    let r = Renderer::lipstick();
    let sc = scenes(3);
    let sampler = SamplerConfig::uniform(&r.schema, 0);
    let plan = plan_transfer(&r, &sampler, sc.len(), 6, 4).unwrap();
    assert!(plan.iter().all(|d| d.scene_a != d.scene_b));
    assert_eq!(plan, plan_transfer(&r, &sampler, sc.len(), 6, 4).unwrap());
    let metrics = Metrics::new(FeatureEncoder::seeded_random(99));
    let input = InputSpec::default_for(RendererId::Lipstick);
    let mut oracle = |i: usize, _: &Scene| Ok(plan[i].g.clone());
    let rep = transfer_experiment(&r, &sc, &plan, &input, &metrics, "oracle", &mut oracle).unwrap();
    assert_eq!(rep.records.len(), 6);
    for rec in &rep.records {
        assert_eq!((rec.psnr_db, rec.ssim, rec.perceptual), (99.0, 1.0, 0.0));
    }
    let mut failing = |i: usize, s: &Scene| {
        if i % 2 == 0 {
            Err(tryon_core::Error::data("no estimate"))
        } else {
            oracle(i, s)
        }
    };
    let rep = transfer_experiment(&r, &sc, &plan, &input, &metrics, "half", &mut failing).unwrap();
    assert_eq!(rep.failed, vec![0, 2, 4]);
    assert_eq!((rep.summary.n, rep.summary.failures), (3, 3));
    assert!(plan_transfer(&r, &sampler, 1, 3, 0).is_err());
}

#[test]
fn empty_transfer_has_undefined_summary() {
    let r = Renderer::lipstick();
    let metrics = Metrics::new(FeatureEncoder::seeded_random(99));
    let mut never = |_: usize, _: &Scene| unreachable!();
    let rep = transfer_experiment(&r, &scenes(2), &[], &InputSpec::default_for(RendererId::Lipstick), &metrics, "x", &mut never)
        .unwrap();
    assert!(rep.records.is_empty());
    assert_eq!(rep.summary.n, 0);
    assert!(rep.summary.psnr_mean.is_none() && rep.summary.perc_std.is_none());
}

fn rec(cond: &str, v: f64) -> MetricsRecord {
    MetricsRecord { sample_id: 0, psnr_db: v, ssim: v / 100.0, perceptual: 1.0 / v, condition: cond.into() }
}

#[test]
fn ablation_table_layout() {
    let a = summarize("graphics_only", &[rec("graphics_only", 30.0), rec("graphics_only", 40.0)], 0);
    let b = summarize("both", &[rec("both", 45.0)], 0);
    let (csv, md) = ablation_report(std::slice::from_ref(&a));
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap().split(',').collect::<Vec<_>>(), ABLATION_COLUMNS);
    assert_eq!(md.lines().count(), 3);
    let (csv, md) = ablation_report(&[b.clone(), a.clone()]);
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["both", "graphics_only"]);
    assert!(md.lines().nth(2).unwrap().starts_with("| both |"));
    assert!(csv.lines().nth(2).unwrap().starts_with("graphics_only,35.000000,7.071068,"));
    let (csv, md) = ablation_report(&[summarize("empty", &[], 2)]);
    assert_eq!(csv.lines().nth(1).unwrap(), "empty,,,,,,,0");
    assert!(md.contains("n/a"));
}

#[test]
fn sensitivity_correlation_oracles() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let sc: Vec<Scene> = scenes(2).iter().map(|s| input.prepare(s).unwrap()).collect();
    let render = |s: &Scene, u: &[f64]| r.render_normalized(s, u);
    let m = r.schema.m();
    let c = sensitivity_correlation(&render, &render, &sc, m, 10, 3).unwrap();
    for v in &c {
        assert!((v.unwrap() - 1.0).abs() < 1e-9);
    }
    let identity = |s: &Scene, _: &[f64]| Ok(s.image.clone());
    let c = sensitivity_correlation(&render, &identity, &sc, m, 10, 3).unwrap();
    assert!(c.iter().all(Option::is_none));
    assert!(sensitivity_correlation(&render, &render, &sc, m, 9, 3).is_err());
    assert!(sensitivity_correlation(&render, &render, &[], m, 10, 3).is_err());
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

#[test]
fn psnr_and_perceptual_are_anticorrelated() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let scene = input.prepare(&scenes(1)[0]).unwrap();
    let metrics = Metrics::new(FeatureEncoder::seeded_random(99));
    let want = r.render_normalized(&scene, &[0.8, 0.7, 0.2, 0.3, 0.2, 0.5, 0.3]).unwrap();
    let sampler = SamplerConfig::uniform(&r.schema, 8);
    let plan = plan_transfer(&r, &sampler, 2, 30, 8).unwrap();
    let (mut p, mut d) = (Vec::new(), Vec::new());
    for draw in &plan {
        let got = r.render(&scene, &draw.g).unwrap();
        let m = metrics.compare(draw.index, "x", &got, &want).unwrap();
        p.push(m.psnr_db);
        d.push(m.perceptual);
    }
    let rho = pearson(&ranks(&p), &ranks(&d)).unwrap();
    assert!(rho < 0.0, "spearman {rho}");
}
