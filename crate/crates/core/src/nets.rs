//! Network definitions: imitator generator, critic and parameter encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tryon_tensor::nn::{Conv2d, ConvTranspose2d, InstanceNorm, Linear};
use tryon_tensor::{Bound, Padding, ParamStore, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    /// Length of the graphics vector appended as input channels.
    pub m: usize,
    /// Channels of the first layer; doubled by each downsampling.
    #[serde(default = "default_gen_width")]
    pub width: usize,
    #[serde(default = "default_res_blocks")]
    pub res_blocks: usize,
    /// Start from a zero residual map, so the untrained output is the input.
    #[serde(default)]
    pub zero_init_residual: bool,
}

fn default_gen_width() -> usize {
    32
}

fn default_res_blocks() -> usize {
    4
}

impl GeneratorArch {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            width: default_gen_width(),
            res_blocks: default_res_blocks(),
            zero_init_residual: false,
        }
    }
}

struct ConvIn {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvIn {
    fn forward(&self, p: &Bound, x: &Var) -> Var {
        self.norm.forward(p, &self.conv.forward(p, x))
    }
}

struct UpIn {
    conv: ConvTranspose2d,
    norm: InstanceNorm,
}

/// Image-to-image generator conditioned on a graphics vector. Predicts a
/// residual map that is added to the input image.
pub struct GeneratorNet {
    pub arch: GeneratorArch,
    stem: ConvIn,
    down: Vec<ConvIn>,
    blocks: Vec<(ConvIn, ConvIn)>,
    up: Vec<UpIn>,
    head: Conv2d,
}

impl GeneratorNet {
    pub fn new(arch: GeneratorArch, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let w = arch.width;
        let conv_in = |store: &mut ParamStore, rng: &mut _, name: &str, cin, cout, k, s, pad| ConvIn {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, k, s, pad, false, rng),
            norm: InstanceNorm::new(store, &format!("{name}.norm"), cout),
        };
        let stem = conv_in(store, rng, "stem", 3 + arch.m, w, 7, 1, Padding::uniform(3));
        let down = vec![
            conv_in(store, rng, "down0", w, 2 * w, 4, 2, Padding::uniform(1)),
            conv_in(store, rng, "down1", 2 * w, 4 * w, 4, 2, Padding::uniform(1)),
        ];
        let blocks = (0..arch.res_blocks)
            .map(|i| {
                (
                    conv_in(store, rng, &format!("res{i}.a"), 4 * w, 4 * w, 4, 1, Padding::same(4)),
                    conv_in(store, rng, &format!("res{i}.b"), 4 * w, 4 * w, 4, 1, Padding::same(4)),
                )
            })
            .collect();
        let up = [(4 * w, 2 * w), (2 * w, w)]
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| UpIn {
                conv: ConvTranspose2d::new(store, &format!("up{i}.conv"), cin, cout, 4, 2, Padding::uniform(1), false, rng),
                norm: InstanceNorm::new(store, &format!("up{i}.norm"), cout),
            })
            .collect();
        let head = Conv2d::new(store, "head", w, 3, 7, 1, Padding::uniform(3), true, rng);
        if arch.zero_init_residual {
            for id in [Some(head.weight), head.bias].into_iter().flatten() {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        Self {
            arch,
            stem,
            down,
            blocks,
            up,
            head,
        }
    }

    pub fn check_input(&self, x: &[usize], g: &[usize]) -> Result<()> {
        let ok = x.len() == 4
            && x[1] == 3
            && x[2] % 4 == 0
            && x[3] % 4 == 0
            && g.len() == 2
            && g[0] == x[0]
            && g[1] == self.arch.m;
        if ok {
            Ok(())
        } else {
            Err(Error::data(format!(
                "generator input {x:?} with graphics {g:?}: need [N, 3, H, W] with H, W divisible by 4 and [N, {}]",
                self.arch.m
            )))
        }
    }

    /// `clamp(X + tanh(residual(X, g)), 0, 1)` for `X: [N, 3, H, W]`,
    /// `g: [N, m]` normalized.
    pub fn forward(&self, p: &Bound, x: &Var, g: &Var) -> Var {
        self.check_input(x.shape(), g.shape()).expect("generator input shapes");
        let s = x.shape().to_vec();
        let planes = g.reshape(&[s[0], self.arch.m, 1, 1]).broadcast_to(&[s[0], self.arch.m, s[2], s[3]]);
        let mut h = self.stem.forward(p, &Var::cat(&[x.clone(), planes], 1)).relu();
        for d in &self.down {
            h = d.forward(p, &h).relu();
        }
        for (a, b) in &self.blocks {
            let r = b.forward(p, &a.forward(p, &h).relu());
            h = h.add(&r);
        }
        for u in &self.up {
            h = u.norm.forward(p, &u.conv.forward(p, &h)).relu();
        }
        let residual = self.head.forward(p, &h).tanh();
        x.add(&residual).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticArch {
    #[serde(default = "default_gen_width")]
    pub width: usize,
}

impl Default for CriticArch {
    fn default() -> Self {
        Self {
            width: default_gen_width(),
        }
    }
}

/// Four stride-2 convolutions with leaky ReLU, then a 3×3 score map
/// averaged to one score per image.
pub struct CriticNet {
    pub arch: CriticArch,
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl CriticNet {
    pub fn new(arch: CriticArch, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let w = arch.width;
        let chans = [3, w, 2 * w, 4 * w, 8 * w];
        let convs = (0..4)
            .map(|i| {
                Conv2d::new(store, &format!("c{i}"), chans[i], chans[i + 1], 4, 2, Padding::uniform(1), true, rng)
            })
            .collect();
        let head = Conv2d::new(store, "head", 8 * w, 1, 3, 1, Padding::uniform(1), true, rng);
        Self { arch, convs, head }
    }

    /// Scores `[N]` for images `[N, 3, H, W]` (H, W divisible by 16).
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(p, &h).leaky_relu(0.2);
        }
        self.head.forward(p, &h).mean_per_sample()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub m: usize,
    #[serde(default = "default_gen_width")]
    pub width: usize,
}

impl EncoderArch {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            width: default_gen_width(),
        }
    }
}

/// Four 4×4 stride-2 ReLU convolutions, global average pooling and a
/// linear head with `m` outputs.
pub struct EncoderNet {
    pub arch: EncoderArch,
    convs: Vec<Conv2d>,
    head: Linear,
}

impl EncoderNet {
    pub fn new(arch: EncoderArch, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let w = arch.width;
        let chans = [3, w, 2 * w, 4 * w, 8 * w];
        let convs = (0..4)
            .map(|i| {
                Conv2d::new(store, &format!("c{i}"), chans[i], chans[i + 1], 4, 2, Padding::uniform(1), true, rng)
            })
            .collect();
        let head = Linear::new(store, "head", 8 * w, arch.m, rng);
        Self { arch, convs, head }
    }

    /// Raw (unclipped) normalized predictions `[N, m]`.
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(p, &h).relu();
        }
        let s = h.shape().to_vec();
        let pooled = h.sum_to(&[s[0], s[1], 1, 1]).scale(1.0 / (s[2] * s[3]) as f32);
        self.head.forward(p, &pooled.reshape(&[s[0], s[1]]))
    }
}
