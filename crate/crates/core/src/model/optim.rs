use serde::{Deserialize, Serialize};

use super::{Gradients, Model, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over the trainable tensors of one model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, config: AdamConfig) -> Adam {
        let sizes: Vec<usize> = model.tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).collect();
        Adam {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<(), ModelError> {
        let grads = grads.slices();
        let params = model.trainable_slices_mut();
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(ModelError::ShapeMismatch("gradients do not match the model".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(ModelError::ShapeMismatch("gradient tensor size differs".into()));
            }
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
