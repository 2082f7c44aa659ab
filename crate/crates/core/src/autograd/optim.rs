use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet<f32>) -> Self {
        Adam {
            config,
            state: AdamState::new(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &ParamGrads) {
        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let w = &mut params.get_mut(id).data;
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for i in 0..w.len() {
                let g = grads.0[k][i] as f64;
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * g;
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = c.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                w[i] = (w[i] as f64 - update) as f32;
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads
        .0
        .iter()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        grads.0.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
