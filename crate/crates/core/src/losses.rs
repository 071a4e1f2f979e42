//! Training objectives of the imitator, its critic and the encoder.

use tryon_tensor::{grad, Tensor, Var};

use crate::error::{Error, Result};
use crate::perceptual::FeatureEncoder;

/// Mean perceptual distance between renderer outputs (constants) and
/// imitator outputs, both `[N, 3, H, W]`.
pub fn imitation_loss(enc: &FeatureEncoder, rendered: &Var, imitated: &Var) -> Result<Var> {
    check_batch(rendered, imitated)?;
    Ok(enc.distance_batch(imitated, rendered).mean())
}

fn check_batch(a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::data(format!("batch shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::data("empty batch"));
    }
    Ok(())
}

/// One resampled coordinate: sample `sample` of the batch with normalized
/// coordinate `dim` replaced by `value`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub sample: usize,
    pub dim: usize,
    pub value: f64,
}

/// Applies a plan to normalized graphics vectors.
pub fn perturbed_vectors(g: &[Vec<f64>], plan: &[Perturbation]) -> Vec<Vec<f64>> {
    plan.iter()
        .map(|p| {
            let mut v = g[p.sample].clone();
            v[p.dim] = p.value;
            v
        })
        .collect()
}

/// Gathers rows of a batch tensor along axis 0.
pub fn gather_rows(x: &Var, rows: &[usize]) -> Var {
    if rows.iter().enumerate().all(|(i, &r)| i == r) && rows.len() == x.shape()[0] {
        return x.clone();
    }
    let parts: Vec<Var> = rows.iter().map(|&r| x.narrow(0, r, 1)).collect();
    Var::cat(&parts, 0)
}

/// Mean over plan entries of the per-pixel mean of
/// `([R(g) - R(g')] - [I(g) - I(g')])²`.
///
/// `r_base`/`i_base` hold one image per batch sample, `r_pert`/`i_pert` one
/// per plan entry. Renderer images are constants.
pub fn sensitivity_loss_from_outputs(
    r_base: &Tensor,
    r_pert: &Tensor,
    i_base: &Var,
    i_pert: &Var,
    plan: &[Perturbation],
) -> Result<Var> {
    if plan.is_empty() {
        return Err(Error::data("sensitivity loss needs a non-empty perturbation plan"));
    }
    if r_pert.shape()[0] != plan.len() || i_pert.shape()[0] != plan.len() {
        return Err(Error::data("perturbed outputs do not match the plan"));
    }
    let rows: Vec<usize> = plan.iter().map(|p| p.sample).collect();
    let r_b = gather_rows(&Var::constant(r_base.clone()), &rows);
    let i_b = gather_rows(i_base, &rows);
    let dr = r_b.sub(&Var::constant(r_pert.clone()));
    let di = i_b.sub(i_pert);
    Ok(dr.sub(&di).square().mean())
}

/// Sensitivity loss with the renderer and imitator given as functions.
///
/// `render(sample, g)` returns the renderer image `[3, H, W]` as a tensor for
/// batch sample `sample`; `imitate(rows, g)` runs the imitator on the given
/// batch rows with graphics `g: [len, m]`.
pub fn sensitivity_loss(
    render: &dyn Fn(usize, &[f64]) -> Result<Tensor>,
    imitate: &dyn Fn(&[usize], &Var) -> Var,
    g: &[Vec<f64>],
    plan: &[Perturbation],
) -> Result<Var> {
    if plan.is_empty() {
        return Err(Error::data("sensitivity loss needs a non-empty perturbation plan"));
    }
    let n = g.len();
    let gp = perturbed_vectors(g, plan);
    let r_base = Tensor::stack(&(0..n).map(|i| render(i, &g[i])).collect::<Result<Vec<_>>>()?);
    let r_pert = Tensor::stack(
        &plan
            .iter()
            .zip(&gp)
            .map(|(p, v)| render(p.sample, v))
            .collect::<Result<Vec<_>>>()?,
    );
    let all: Vec<usize> = (0..n).collect();
    let rows: Vec<usize> = plan.iter().map(|p| p.sample).collect();
    let i_base = imitate(&all, &Var::constant(vectors_tensor(g)));
    let i_pert = imitate(&rows, &Var::constant(vectors_tensor(&gp)));
    sensitivity_loss_from_outputs(&r_base, &r_pert, &i_base, &i_pert, plan)
}

/// `[N, m]` tensor of normalized vectors.
pub fn vectors_tensor(g: &[Vec<f64>]) -> Tensor {
    let m = g.first().map(Vec::len).unwrap_or(0);
    Tensor::new(&[g.len(), m], g.iter().flatten().map(|&v| v as f32).collect())
}

/// Generator adversarial term `-mean(D(fake))`.
pub fn generator_adversarial(fake_scores: &Var) -> Var {
    fake_scores.mean().neg()
}

/// `x̂ = u·real + (1 - u)·fake` with one `u` per sample.
pub fn interpolate(real: &Tensor, fake: &Tensor, u: &[f32]) -> Tensor {
    let n = real.shape()[0];
    assert_eq!(u.len(), n);
    let per = real.numel() / n.max(1);
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(k, (&r, &f))| {
            let t = u[k / per];
            t * r + (1.0 - t) * f
        })
        .collect();
    Tensor::new(real.shape(), data)
}

/// Critic loss `mean(D(fake)) - mean(D(real)) + λ·mean((|∇D(x̂)| - 1)²)`.
///
/// `critic` maps `[N, 3, H, W]` to scores `[N]`. `fake` should be detached
/// from the generator. The penalty is differentiable with respect to the
/// critic parameters.
pub fn critic_loss(
    critic: &dyn Fn(&Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    u: &[f32],
    lambda_gp: f32,
) -> Result<(Var, f32)> {
    if real.shape() != fake.shape() {
        return Err(Error::data("real and fake batches differ in shape"));
    }
    let d_real = critic(&Var::constant(real.clone())).mean();
    let d_fake = critic(&Var::constant(fake.clone())).mean();
    let penalty = gradient_penalty(critic, &interpolate(real, fake, u));
    let gp_value = penalty.item();
    Ok((d_fake.sub(&d_real).add(&penalty.scale(lambda_gp)), gp_value))
}

/// `mean((|∇_x D(x)|₂ - 1)²)` with the norm taken per sample.
pub fn gradient_penalty(critic: &dyn Fn(&Var) -> Var, x: &Tensor) -> Var {
    let xh = Var::leaf(x.clone());
    let scores = critic(&xh);
    let g = grad(&scores.sum(), &[&xh], true)[0].clone();
    match g {
        Some(g) => g.square().sum_per_sample().sqrt().add_scalar(-1.0).square().mean(),
        None => Var::constant(Tensor::scalar(1.0)),
    }
}

/// `(1/n) Σ_i Σ_j (pred_ij - g_ij)²` in normalized space.
pub fn graphics_loss(pred: &Var, target: &Var) -> Result<Var> {
    check_batch(pred, target)?;
    Ok(pred.sub(target).square().sum_per_sample().mean())
}

/// Mean perceptual distance between renders and the imitator's rendering of
/// the encoder predictions. `imitated` must come from a frozen imitator fed
/// with the prediction.
pub fn rendering_loss(enc: &FeatureEncoder, rendered: &Var, imitated: &Var) -> Result<Var> {
    check_batch(rendered, imitated)?;
    Ok(enc.distance_batch(imitated, rendered).mean())
}
