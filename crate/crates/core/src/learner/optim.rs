use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::network::{Dense, Network};

/// `lr_min + ½ (lr_max − lr_min)(1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let progress = (step as f64 / total).clamp(0.0, 1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl AdamState {
    pub fn new(params: &Network) -> Self {
        AdamState {
            step: 0,
            m: params.zero_gradients(),
            v: params.zero_gradients(),
        }
    }
}

fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    cfg: &AdamConfig,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut Network,
    grads: &[Dense],
    lr: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .layers_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        update(
            &mut p.weights,
            &g.weights,
            &mut m.weights,
            &mut v.weights,
            lr,
            cfg,
            c1,
            c2,
        );
        update(
            &mut p.bias,
            &g.bias,
            &mut m.bias,
            &mut v.bias,
            lr,
            cfg,
            c1,
            c2,
        );
    }
}
