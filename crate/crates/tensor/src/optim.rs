//! Adam.

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers are created lazily to match
/// the store they are first stepped with.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(store.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = store.values().iter().map(|t| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (value, g)) in store.values_mut().iter_mut().zip(grads).enumerate() {
            assert_eq!(value.shape(), g.shape(), "gradient shape mismatch for parameter {i}");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
