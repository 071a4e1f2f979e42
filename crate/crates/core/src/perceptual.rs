//! Feature-space perceptual distance with a frozen convolutional encoder.
//!
//! `d(x, y) = Σ_s mean((f_s(x) - f_s(y))²)` over the stage outputs `f_s`.
//! The default encoder is a fixed seeded random stack; trained weights can
//! be imported from a weight file.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use tryon_tensor::{ConvGeom, Padding, Tensor, Var};

use crate::error::{read_file, write_file, Error, Result};
use crate::image::{images_to_tensor, Image};

pub const DEFAULT_CHANNELS: [usize; 3] = [16, 32, 64];
const MAGIC: &[u8; 4] = b"TRYP";
const VERSION: u32 = 1;
const MAX_CHANNELS: usize = 4096;
const MAX_KERNEL: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// `[out, in, k, k]`, odd `k`.
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
}

impl Stage {
    fn geom(&self) -> ConvGeom {
        ConvGeom::new(self.stride, Padding::uniform(self.weight.shape()[2] / 2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSource {
    SeededRandom(u64),
    Imported(PathBuf),
}

pub fn make_feature_encoder(source: &FeatureSource) -> Result<FeatureEncoder> {
    match source {
        FeatureSource::SeededRandom(seed) => Ok(FeatureEncoder::seeded_random(*seed)),
        FeatureSource::Imported(path) => FeatureEncoder::load(path),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageHeader {
    #[serde(rename = "in")]
    cin: usize,
    out: usize,
    kernel: usize,
    #[serde(default = "default_stride")]
    stride: usize,
}

fn default_stride() -> usize {
    2
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    stages: Vec<StageHeader>,
}

impl FeatureEncoder {
    /// Three stride-2 3×3 stages (16/32/64 channels) with ReLU, He-uniform
    /// weights drawn from `seed` and zero biases.
    pub fn seeded_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &cout in &DEFAULT_CHANNELS {
            let fan_in = cin * 9;
            let bound = (6.0 / fan_in as f32).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite");
            let w: Vec<f32> = (0..cout * fan_in).map(|_| dist.sample(&mut rng)).collect();
            stages.push(Stage {
                weight: Tensor::new(&[cout, cin, 3, 3], w),
                bias: Tensor::zeros(&[cout]),
                stride: 2,
            });
            cin = cout;
        }
        Self { stages }
    }

    /// Checks that stages chain and kernels are odd.
    pub fn from_stages(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::data("feature encoder needs at least one stage"));
        }
        let mut cin = 3;
        for (i, s) in stages.iter().enumerate() {
            let ws = s.weight.shape();
            let ok = ws.len() == 4
                && ws[1] == cin
                && ws[2] == ws[3]
                && ws[2] % 2 == 1
                && s.bias.shape() == [ws[0]]
                && s.stride >= 1;
            if !ok {
                return Err(Error::data(format!(
                    "stage {i}: weight {:?} / bias {:?} do not fit {cin} input channels",
                    ws,
                    s.bias.shape()
                )));
            }
            if !s.weight.all_finite() || !s.bias.all_finite() {
                return Err(Error::data(format!("stage {i}: non-finite weights")));
            }
            cin = ws[0];
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.weight.shape()[0]).collect()
    }

    /// Stage outputs for a `[N, 3, H, W]` batch.
    pub fn features(&self, x: &Var) -> Vec<Var> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let c = s.bias.shape()[0];
            let w = Var::constant(s.weight.clone());
            let b = Var::constant(s.bias.reshape(&[1, c, 1, 1]));
            h = h.conv2d(&w, s.geom()).add(&b).relu();
            out.push(h.clone());
        }
        out
    }

    /// Distance of each pair in two aligned batches, shape `[N]`.
    pub fn distance_batch(&self, x: &Var, y: &Var) -> Var {
        assert_eq!(x.shape(), y.shape(), "perceptual distance of different shapes");
        let fy = self.features(y);
        self.distance_to_features(x, &fy)
    }

    /// Like [`distance_batch`](Self::distance_batch) with precomputed
    /// features of the second batch.
    pub fn distance_to_features(&self, x: &Var, fy: &[Var]) -> Var {
        let fx = self.features(x);
        let mut total: Option<Var> = None;
        for (a, b) in fx.iter().zip(fy) {
            let d = a.sub(b).square().mean_per_sample();
            total = Some(match total {
                Some(t) => t.add(&d),
                None => d,
            });
        }
        total.expect("at least one stage")
    }

    pub fn distance(&self, x: &Image, y: &Image) -> Result<f64> {
        if x.width != y.width || x.height != y.height {
            return Err(Error::data(format!(
                "perceptual distance of {}x{} and {}x{} images",
                x.width, x.height, y.width, y.height
            )));
        }
        let _g = tryon_tensor::no_grad();
        let d = self.distance_batch(
            &Var::constant(images_to_tensor(&[x])),
            &Var::constant(images_to_tensor(&[y])),
        );
        Ok(d.value().data()[0] as f64)
    }

    /// Weight file: magic `TRYP`, u32 version, u32 header length, JSON header
    /// `{stages: [{in, out, kernel, stride}]}`, then per stage the weights
    /// and biases as little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            stages: self
                .stages
                .iter()
                .map(|s| {
                    let ws = s.weight.shape();
                    StageHeader {
                        cin: ws[1],
                        out: ws[0],
                        kernel: ws[2],
                        stride: s.stride,
                    }
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for s in &self.stages {
            for v in s.weight.data().iter().chain(s.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err("not a feature-encoder weight file".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format!("unsupported weight file version {version}"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if hlen > body.len() {
            return Err("truncated header".into());
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| format!("header: {e}"))?;
        let mut payload = &body[hlen..];
        let mut take = |n: usize| -> std::result::Result<Vec<f32>, String> {
            let bytes_needed = n.checked_mul(4).ok_or("size overflow")?;
            if payload.len() < bytes_needed {
                return Err("truncated payload".into());
            }
            let (head, rest) = payload.split_at(bytes_needed);
            payload = rest;
            Ok(head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let mut stages = Vec::new();
        for (i, h) in header.stages.iter().enumerate() {
            if h.cin == 0
                || h.out == 0
                || h.cin > MAX_CHANNELS
                || h.out > MAX_CHANNELS
                || h.kernel == 0
                || h.kernel > MAX_KERNEL
                || h.stride == 0
            {
                return Err(format!("stage {i}: unsupported dimensions"));
            }
            let w = take(h.out * h.cin * h.kernel * h.kernel)?;
            let b = take(h.out)?;
            stages.push(Stage {
                weight: Tensor::new(&[h.out, h.cin, h.kernel, h.kernel], w),
                bias: Tensor::new(&[h.out], b),
                stride: h.stride,
            });
        }
        if !payload.is_empty() {
            return Err(format!("{} trailing bytes", payload.len()));
        }
        FeatureEncoder::from_stages(stages).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        FeatureEncoder::from_bytes(&read_file(path)?).map_err(|e| Error::decode(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}
