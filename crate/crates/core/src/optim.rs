//! Adam with bias correction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment state keyed by caller-chosen slot ids.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: i32,
    state: HashMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// Advances the shared step counter; call once per optimizer step.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates `param` in place from `grad` with learning rate `lr`.
    pub fn update_with_lr(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(param.len(), grad.len());
        let c = self.config;
        let t = self.t.max(1);
        let (m, v) = self
            .state
            .entry(slot)
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..param.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param[i] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }

    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        let lr = self.config.learning_rate;
        self.update_with_lr(slot, param, grad, lr);
    }
}
