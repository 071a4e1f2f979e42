//! Run configuration: one JSON file with sections, overridable by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tryon_core::dataset::InputSpec;
use tryon_core::encoder::EncoderTrainConfig;
use tryon_core::error::read_file;
use tryon_core::imitator::ImitatorTrainConfig;
use tryon_core::schema::RendererId;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of scene directories (`image.png`, masks).
    pub scenes: Option<PathBuf>,
    pub presets: Option<PathBuf>,
    pub swatch: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub imitator: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenesSection {
    pub n: usize,
    pub size: usize,
}

impl Default for ScenesSection {
    fn default() -> Self {
        Self { n: 24, size: 128 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// Overrides the fitted mixture weight of uniform draws.
    pub uniform_mix: Option<f64>,
    /// Draw uniformly over the unit cube instead of fitting presets.
    pub uniform: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n: usize,
    /// Network input spec; the renderer default when absent.
    pub input: Option<InputSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n: 500, input: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub encoder: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n: usize,
    /// Seed of the feature encoder used for the perceptual metric; kept
    /// apart from the training feature seeds.
    pub feature_seed: u64,
    pub probes_per_dim: usize,
    pub conditions: Vec<Condition>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n: 100,
            feature_seed: 99,
            probes_per_dim: 20,
            conditions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub renderer_id: Option<RendererId>,
    pub seed: Option<u64>,
    pub paths: Paths,
    pub scenes: ScenesSection,
    pub sampler: SamplerSection,
    pub dataset: DatasetSection,
    pub imitator: ImitatorTrainConfig,
    pub encoder: EncoderTrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// The file at `path`, or defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("a seed is required: pass --seed or set \"seed\" in the config".into()))
    }

    pub fn renderer(&self) -> Result<RendererId, CliError> {
        self.renderer_id
            .ok_or_else(|| CliError::Usage("a renderer is required: pass --renderer or set \"renderer_id\"".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing path: {what}")))
}
