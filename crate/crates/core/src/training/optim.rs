use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::models::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter optimizer state, indexed by parameter id.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    adam: AdamConfig,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32, adam: AdamConfig, model: &ModelParams) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f32>> = model
                    .params()
                    .iter()
                    .map(|p| vec![0.0; p.value.numel()])
                    .collect();
                (zeros.clone(), zeros)
            }
        };
        Optimizer {
            kind,
            lr,
            adam,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Apply one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, model: &mut ModelParams, grads: &Gradients) {
        self.step += 1;
        let ids: Vec<_> = model
            .params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.id)
            .collect();
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = model.param_mut(id).value.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in p.iter_mut().zip(g.data()) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.m[id.0];
                    let v = &mut self.v[id.0];
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= self.lr * mh / (vh.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
