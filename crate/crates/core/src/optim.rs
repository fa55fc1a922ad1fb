//! Adam with optional decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) decay; zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::default(),
        }
    }

    /// Applies one update to every parameter that holds a gradient.
    /// Gradients are left in place; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) {
        let c = self.config;
        let st = &mut self.state;
        if st.first.len() != params.len() {
            st.first = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            st.second = st.first.clone();
        }
        st.step += 1;
        let bc1 = 1.0 - c.beta1.powi(st.step as i32);
        let bc2 = 1.0 - c.beta2.powi(st.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let m = &mut st.first[k];
            let v = &mut st.second[k];
            let values = p.tensor.data_mut();
            for i in 0..values.len() {
                if c.weight_decay > 0.0 {
                    values[i] -= c.lr * c.weight_decay * values[i];
                }
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}
