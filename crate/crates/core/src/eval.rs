//! Image metrics, the transfer protocol, ablation tables and the
//! sensitivity-correlation diagnostic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::InputSpec;
use crate::error::{Error, Result};
use crate::image::{luma, Image};
use crate::perceptual::FeatureEncoder;
use crate::renderer::Renderer;
use crate::sampler::{Sampler, SamplerConfig};
use crate::scene::Scene;
use crate::schema::GraphicsVector;

pub const PSNR_CAP: f64 = 99.0;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Neumaier-compensated sum.
pub fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = fsum(values.iter().copied()) / n;
    let var = if values.len() > 1 {
        fsum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = fsum(x.iter().copied()) / n;
    let my = fsum(y.iter().copied()) / n;
    let sxy = fsum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = fsum(x.iter().map(|a| (a - mx).powi(2)));
    let syy = fsum(y.iter().map(|b| (b - my).powi(2)));
    // Constant responses leave only round-off variance.
    let flat = |ss: f64, v: &[f64]| ss <= 1e-20 * fsum(v.iter().map(|a| a * a)) || ss == 0.0;
    if flat(sxx, x) || flat(syy, y) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_same(x: &Image, y: &Image) -> Result<()> {
    if x.width != y.width || x.height != y.height {
        return Err(Error::data(format!(
            "image sizes differ: {}×{} vs {}×{}",
            x.width, x.height, y.width, y.height
        )));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over all channels, capped at 99 dB.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    check_same(x, y)?;
    let mse = fsum(x.data.iter().zip(&y.data).map(|(&a, &b)| (a as f64 - b as f64).powi(2))) / x.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WIN / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WIN)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a `w×h` plane.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM on luminance with an 11×11 Gaussian window (σ = 1.5),
/// averaged over the valid region.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    check_same(x, y)?;
    if x.width < SSIM_WIN || x.height < SSIM_WIN {
        return Err(Error::data(format!(
            "ssim needs images of at least {SSIM_WIN}×{SSIM_WIN}, got {}×{}",
            x.width, x.height
        )));
    }
    let lum = |img: &Image| -> Vec<f64> { (0..img.num_pixels()).map(|i| luma(img.pixel(i)) as f64).collect() };
    let (a, b) = (lum(x), lum(y));
    let (w, h) = (x.width, x.height);
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mu_a, ow, oh) = filter_valid(&a, w, h, &k);
    let (mu_b, _, _) = filter_valid(&b, w, h, &k);
    let (aa, _, _) = filter_valid(&prod(&a, &a), w, h, &k);
    let (bb, _, _) = filter_valid(&prod(&b, &b), w, h, &k);
    let (ab, _, _) = filter_valid(&prod(&a, &b), w, h, &k);
    let map = (0..ow * oh).map(|i| {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
    });
    Ok((fsum(map) / (ow * oh) as f64).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sample_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub condition: String,
}

/// Mean ± std per metric; `None` fields when no record succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub condition: String,
    pub n: usize,
    pub failures: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub perc_mean: Option<f64>,
    pub perc_std: Option<f64>,
}

pub fn summarize(condition: &str, records: &[MetricsRecord], failures: usize) -> Summary {
    let col = |f: fn(&MetricsRecord) -> f64| mean_std(&records.iter().map(f).collect::<Vec<_>>());
    let p = col(|r| r.psnr_db);
    let s = col(|r| r.ssim);
    let d = col(|r| r.perceptual);
    Summary {
        condition: condition.to_string(),
        n: records.len(),
        failures,
        psnr_mean: p.map(|v| v.0),
        psnr_std: p.map(|v| v.1),
        ssim_mean: s.map(|v| v.0),
        ssim_std: s.map(|v| v.1),
        perc_mean: d.map(|v| v.0),
        perc_std: d.map(|v| v.1),
    }
}

/// PSNR, SSIM and perceptual distance against a fixed feature encoder.
pub struct Metrics {
    pub features: FeatureEncoder,
}

impl Metrics {
    pub fn new(features: FeatureEncoder) -> Self {
        Self { features }
    }

    pub fn compare(&self, sample_id: usize, condition: &str, got: &Image, want: &Image) -> Result<MetricsRecord> {
        Ok(MetricsRecord {
            sample_id,
            psnr_db: psnr(got, want)?,
            ssim: ssim(got, want)?,
            perceptual: self.features.distance(got, want)?,
            condition: condition.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferDraw {
    pub index: usize,
    pub g: GraphicsVector,
    pub scene_a: usize,
    pub scene_b: usize,
}

/// `n` sampled graphics vectors, each with an ordered pair of distinct
/// scene indices.
pub fn plan_transfer(
    renderer: &Renderer,
    sampler: &SamplerConfig,
    n_scenes: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TransferDraw>> {
    if n_scenes < 2 {
        return Err(Error::data("transfer experiment needs at least two scenes"));
    }
    let mut cfg = sampler.clone();
    cfg.seed = seed;
    let mut s = Sampler::new(&cfg, &renderer.schema)?;
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x7A45_F3E5);
    (0..n)
        .map(|index| {
            let (g, _) = renderer.schema.denormalize(&s.next_normalized())?;
            let scene_a = pick.random_range(0..n_scenes);
            let scene_b = (scene_a + pick.random_range(1..n_scenes)) % n_scenes;
            Ok(TransferDraw {
                index,
                g,
                scene_a,
                scene_b,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub records: Vec<MetricsRecord>,
    /// Indices of draws whose estimate or render failed.
    pub failed: Vec<usize>,
    pub summary: Summary,
}

/// For each draw: render `g` on scene A, estimate parameters from that
/// render, render the estimate on scene B and compare with `g` rendered on
/// B. Comparison happens on scene B prepared by `compare`.
///
/// `estimate(index, reference)` receives scene A with its image replaced by
/// the render.
pub fn transfer_experiment(
    renderer: &Renderer,
    scenes: &[Scene],
    plan: &[TransferDraw],
    compare: &InputSpec,
    metrics: &Metrics,
    condition: &str,
    estimate: &mut dyn FnMut(usize, &Scene) -> Result<GraphicsVector>,
) -> Result<TransferReport> {
    let mut records = Vec::with_capacity(plan.len());
    let mut failed = Vec::new();
    for d in plan {
        let (a, b) = (
            scenes.get(d.scene_a).ok_or_else(|| Error::data("plan scene index out of range"))?,
            scenes.get(d.scene_b).ok_or_else(|| Error::data("plan scene index out of range"))?,
        );
        let mut reference = a.clone();
        reference.image = renderer.render(a, &d.g)?.quantized();
        let want = renderer.render(b, &d.g)?.quantized();
        let got = estimate(d.index, &reference).and_then(|g_hat| renderer.render(b, &g_hat));
        let got = match got {
            Ok(img) => img.quantized(),
            Err(e) => {
                log::warn!("transfer draw {}: {e}", d.index);
                failed.push(d.index);
                continue;
            }
        };
        let mut got_s = b.clone();
        got_s.image = got;
        let mut want_s = b.clone();
        want_s.image = want;
        let got_c = compare.prepare(&got_s)?.image;
        let want_c = compare.prepare(&want_s)?.image;
        records.push(metrics.compare(d.index, condition, &got_c, &want_c)?);
    }
    let summary = summarize(condition, &records, failed.len());
    Ok(TransferReport {
        records,
        failed,
        summary,
    })
}

/// A real-data evaluation triple: source portrait, reference showing the
/// look and the source wearing that look.
pub struct Triplet {
    pub source: Scene,
    pub reference: Scene,
    pub target: Image,
}

/// Estimates parameters from each reference, renders them on the source and
/// compares with the target.
pub fn triplet_evaluation(
    renderer: &Renderer,
    triplets: &[Triplet],
    compare: &InputSpec,
    metrics: &Metrics,
    condition: &str,
    estimate: &mut dyn FnMut(usize, &Scene) -> Result<GraphicsVector>,
) -> Result<TransferReport> {
    let mut records = Vec::with_capacity(triplets.len());
    let mut failed = Vec::new();
    for (i, t) in triplets.iter().enumerate() {
        let got = estimate(i, &t.reference).and_then(|g| renderer.render(&t.source, &g));
        let got = match got {
            Ok(img) => img,
            Err(e) => {
                log::warn!("triplet {i}: {e}");
                failed.push(i);
                continue;
            }
        };
        let mut got_s = t.source.clone();
        got_s.image = got;
        let mut want_s = t.source.clone();
        want_s.image = t.target.clone();
        let got_c = compare.prepare(&got_s)?.image;
        let want_c = compare.prepare(&want_s)?.image;
        records.push(metrics.compare(i, condition, &got_c, &want_c)?);
    }
    let summary = summarize(condition, &records, failed.len());
    Ok(TransferReport {
        records,
        failed,
        summary,
    })
}

pub const ABLATION_COLUMNS: [&str; 8] = [
    "condition",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "perc_mean",
    "perc_std",
    "n",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV (header plus one row per condition, in order) and a markdown table.
pub fn ablation_report(rows: &[Summary]) -> (String, String) {
    let mut csv = ABLATION_COLUMNS.join(",");
    csv.push('\n');
    let mut md = String::from("| condition | PSNR (mean ± std) | SSIM (mean ± std) | perceptual dist. (mean ± std) | n |\n");
    md.push_str("|---|---|---|---|---|\n");
    let pm = |m: Option<f64>, s: Option<f64>, prec: usize| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.prec$} ± {s:.prec$}"),
        _ => "n/a".to_string(),
    };
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.condition,
            cell(r.psnr_mean),
            cell(r.psnr_std),
            cell(r.ssim_mean),
            cell(r.ssim_std),
            cell(r.perc_mean),
            cell(r.perc_std),
            r.n
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.condition,
            pm(r.psnr_mean, r.psnr_std, 2),
            pm(r.ssim_mean, r.ssim_std, 4),
            pm(r.perc_mean, r.perc_std, 4),
            r.n
        ));
    }
    (csv, md)
}

/// Per dimension `j`: Pearson correlation, across probes, of
/// `|R(g) - R(g'_j)|₁` with `|I(g) - I(g'_j)|₁`, where `g'_j` resamples
/// coordinate `j` of a uniform `g`. Scenes must already be prepared.
pub fn sensitivity_correlation(
    render: &dyn Fn(&Scene, &[f64]) -> Result<Image>,
    imitate: &dyn Fn(&Scene, &[f64]) -> Result<Image>,
    scenes: &[Scene],
    m: usize,
    probes_per_dim: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    if probes_per_dim < 10 {
        return Err(Error::data("sensitivity correlation needs at least 10 probes per dimension"));
    }
    if scenes.is_empty() {
        return Err(Error::data("sensitivity correlation needs scenes"));
    }
    let l1 = |a: &Image, b: &Image| fsum(a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|j| {
            let mut rr = Vec::with_capacity(probes_per_dim);
            let mut ii = Vec::with_capacity(probes_per_dim);
            for _ in 0..probes_per_dim {
                let s = &scenes[rng.random_range(0..scenes.len())];
                let g: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                let mut gp = g.clone();
                gp[j] = rng.random::<f64>();
                rr.push(l1(&render(s, &g)?, &render(s, &gp)?));
                ii.push(l1(&imitate(s, &g)?, &imitate(s, &gp)?));
            }
            Ok(pearson(&rr, &ii))
        })
        .collect()
}

/// Mean over defined entries; `None` when all are undefined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    mean_std(&v).map(|x| x.0)
}
