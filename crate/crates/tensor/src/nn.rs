//! Parameter storage and the layers used by the networks.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::conv::{ConvGeom, Padding};
use crate::graph::{grad_tensors, Var};
use crate::tensor::{numel, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value by the tensor of the same name in `other`.
    /// Fails when names or shapes differ.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<(), String> {
        if other.len() != self.values.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                other.len()
            ));
        }
        for (i, name) in self.names.iter().enumerate() {
            let Some((_, t)) = other.iter().find(|(n, _)| n == name) else {
                return Err(format!("missing tensor {name}"));
            };
            if t.shape() != self.values[i].shape() {
                return Err(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    self.values[i].shape(),
                    t.shape()
                ));
            }
        }
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = other.iter().find(|(n, _)| n == name).expect("checked above");
            self.values[i] = t.clone();
        }
        Ok(())
    }

    /// Wraps every parameter in a graph leaf for one forward pass.
    /// Frozen bindings still let gradients flow to the inputs.
    pub fn bind(&self, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|t| {
                if trainable {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of one store bound into the graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of `loss` for every bound parameter (zeros where unused).
    pub fn gradients(&self, loss: &Var) -> Vec<Tensor> {
        let refs: Vec<&Var> = self.vars.iter().collect();
        grad_tensors(loss, &refs)
            .into_iter()
            .zip(&self.vars)
            .map(|(g, v)| g.unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }
}

/// PyTorch-style default init: uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::new(shape, (0..numel(shape)).map(|_| dist.sample(rng)).collect())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: Padding,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(&[cout, cin, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_fan_in(&[cout], fan_in, rng)));
        Self {
            weight,
            bias,
            geom: ConvGeom::new(stride, pad),
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let y = x.conv2d(p.var(self.weight), self.geom);
        add_channel_bias(y, self.bias.map(|b| p.var(b)))
    }
}

fn add_channel_bias(y: Var, bias: Option<&Var>) -> Var {
    match bias {
        Some(b) => {
            let c = b.shape()[0];
            y.add(&b.reshape(&[1, c, 1, 1]))
        }
        None => y,
    }
}

/// Transposed convolution; weight stored as `[cin, cout, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub kernel: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: Padding,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cout * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(&[cin, cout, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_fan_in(&[cout], fan_in, rng)));
        Self {
            weight,
            bias,
            geom: ConvGeom::new(stride, pad),
            kernel,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.geom.stride;
        let pad = self.geom.pad;
        (
            (h - 1) * s + self.kernel - pad.top - pad.bottom,
            (w - 1) * s + self.kernel - pad.left - pad.right,
        )
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let y = x.conv2d_input_grad(p.var(self.weight), self.out_hw(h, w), self.geom);
        add_channel_bias(y, self.bias.map(|b| p.var(b)))
    }
}

/// Instance normalization with a learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f32,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let c = x.shape()[1];
        let g = p.var(self.gamma).reshape(&[1, c, 1, 1]);
        let b = p.var(self.beta).reshape(&[1, c, 1, 1]);
        x.instance_norm(self.eps).mul(&g).add(&b)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), uniform_fan_in(&[fan_out, fan_in], fan_in, rng)),
            bias: store.add(format!("{name}.bias"), uniform_fan_in(&[fan_out], fan_in, rng)),
        }
    }

    /// `[N, in]` → `[N, out]`.
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let w = p.var(self.weight);
        let b = p.var(self.bias);
        x.matmul(&w.transpose()).add(&b.reshape(&[1, b.shape()[0]]))
    }
}
