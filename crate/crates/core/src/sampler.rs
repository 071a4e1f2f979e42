//! Training distribution of graphics vectors: a Gaussian fitted to expert
//! presets in normalized space, mixed with uniform draws over the unit cube.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::schema::{GraphicsVector, ParameterSchema, RendererId};

/// Diagonal ridge added to fitted covariances.
pub const RIDGE: f64 = 1e-4;
pub const DEFAULT_UNIFORM_MIX: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub g: GraphicsVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetBank {
    pub renderer_id: RendererId,
    pub presets: Vec<Preset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetEntry {
    name: String,
    params: serde_json::Value,
}

/// Parses `[{name, params: {...}}]`; every preset must validate.
pub fn parse_presets(text: &str, schema: &ParameterSchema) -> Result<PresetBank> {
    let entries: Vec<PresetEntry> =
        serde_json::from_str(text).map_err(|e| Error::data(format!("presets JSON: {e}")))?;
    let mut presets = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let g = schema
            .params_from_json(&e.params)
            .map_err(|err| Error::data(format!("preset {i} ({}): {err}", e.name)))?;
        let v = schema.validate(&g)?;
        if !v.is_empty() {
            let list: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            return Err(Error::data(format!(
                "preset {i} ({}): range error: {}",
                e.name,
                list.join("; ")
            )));
        }
        presets.push(Preset { name: e.name, g });
    }
    Ok(PresetBank {
        renderer_id: schema.renderer_id,
        presets,
    })
}

pub fn load_presets(path: &Path, schema: &ParameterSchema) -> Result<PresetBank> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::decode(path, e))?;
    parse_presets(text, schema).map_err(|e| Error::decode(path, e))
}

/// Serializes a bank in the format [`parse_presets`] reads.
pub fn presets_to_json(bank: &PresetBank, schema: &ParameterSchema) -> String {
    let list: Vec<serde_json::Value> = bank
        .presets
        .iter()
        .map(|p| {
            serde_json::json!({
                "name": p.name,
                "params": serde_json::to_value(schema.params_map(&p.g.values)).expect("finite"),
            })
        })
        .collect();
    serde_json::to_string_pretty(&list).expect("serializes")
}

/// Gaussian-plus-uniform mixture over normalized parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub renderer_id: RendererId,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub uniform_mix: f64,
    pub seed: u64,
}

impl SamplerConfig {
    /// Pure uniform sampling over the unit cube.
    pub fn uniform(schema: &ParameterSchema, seed: u64) -> Self {
        let m = schema.m();
        Self {
            renderer_id: schema.renderer_id,
            mean: vec![0.5; m],
            cov: (0..m)
                .map(|i| (0..m).map(|j| if i == j { RIDGE } else { 0.0 }).collect())
                .collect(),
            uniform_mix: 1.0,
            seed,
        }
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let m = self.mean.len();
        DMatrix::from_fn(m, m, |i, j| self.cov[i][j])
    }

    /// Checks dimensions, symmetry and that the smallest eigenvalue of the
    /// covariance is at least the ridge.
    pub fn validate(&self, schema: &ParameterSchema) -> Result<()> {
        let m = schema.m();
        if self.renderer_id != schema.renderer_id {
            return Err(Error::data(format!(
                "sampler config is for {}, schema is {}",
                self.renderer_id, schema.renderer_id
            )));
        }
        if self.mean.len() != m || self.cov.len() != m || self.cov.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                got: self.mean.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.uniform_mix) {
            return Err(Error::data(format!("uniform_mix {} outside [0, 1]", self.uniform_mix)));
        }
        if self.mean.iter().chain(self.cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::data("sampler config has non-finite entries"));
        }
        let c = self.cov_matrix();
        for i in 0..m {
            for j in 0..i {
                if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * (1.0 + c[(i, j)].abs()) {
                    return Err(Error::data("covariance is not symmetric"));
                }
            }
        }
        let min_eig = c.symmetric_eigen().eigenvalues.min();
        if min_eig < RIDGE * (1.0 - 1e-9) {
            return Err(Error::data(format!(
                "covariance minimum eigenvalue {min_eig:e} is below the ridge {RIDGE:e}"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("sampler config JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializes")
    }
}

/// Sample mean and covariance (plus ridge) of the normalized presets.
pub fn fit_gaussian(bank: &PresetBank, schema: &ParameterSchema) -> Result<SamplerConfig> {
    if bank.presets.len() < 2 {
        return Err(Error::data(format!(
            "fitting needs at least 2 presets, got {}",
            bank.presets.len()
        )));
    }
    let m = schema.m();
    let rows: Vec<Vec<f64>> = bank
        .presets
        .iter()
        .map(|p| schema.normalize(&p.g))
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let s: f64 = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum();
                    s / (n - 1.0) + if i == j { RIDGE } else { 0.0 }
                })
                .collect()
        })
        .collect();
    Ok(SamplerConfig {
        renderer_id: schema.renderer_id,
        mean,
        cov,
        uniform_mix: DEFAULT_UNIFORM_MIX,
        seed: 0,
    })
}

/// Seeded stream of normalized draws.
pub struct Sampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    uniform_mix: f64,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(cfg: &SamplerConfig, schema: &ParameterSchema) -> Result<Self> {
        cfg.validate(schema)?;
        let chol = cfg
            .cov_matrix()
            .cholesky()
            .ok_or_else(|| Error::data("covariance is not positive definite"))?
            .l();
        Ok(Self {
            mean: DVector::from_vec(cfg.mean.clone()),
            chol,
            uniform_mix: cfg.uniform_mix,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// One draw in `[0, 1]^m`.
    pub fn next_normalized(&mut self) -> Vec<f64> {
        let m = self.mean.len();
        let u: f64 = self.rng.random();
        let v: Vec<f64> = if u < self.uniform_mix {
            (0..m).map(|_| self.rng.random::<f64>()).collect()
        } else {
            let z = DVector::from_fn(m, |_, _| self.rng.sample::<f64, _>(StandardNormal));
            (&self.mean + &self.chol * z).iter().copied().collect()
        };
        v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect()
    }
}

/// `n` physical graphics vectors, all within the schema ranges.
pub fn sample_params(cfg: &SamplerConfig, schema: &ParameterSchema, n: usize) -> Result<Vec<GraphicsVector>> {
    let mut s = Sampler::new(cfg, schema)?;
    (0..n)
        .map(|_| Ok(schema.denormalize(&s.next_normalized())?.0))
        .collect()
}

/// Presets shipped with the library.
pub fn builtin_presets_json(renderer: RendererId) -> &'static str {
    match renderer {
        RendererId::Lipstick => include_str!("../../../assets/presets_lipstick.json"),
        RendererId::Hair => include_str!("../../../assets/presets_hair.json"),
    }
}

pub fn builtin_presets(schema: &ParameterSchema) -> PresetBank {
    parse_presets(builtin_presets_json(schema.renderer_id), schema).expect("built-in presets are valid")
}
