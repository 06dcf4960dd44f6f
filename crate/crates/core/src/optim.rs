//! Adam with a stepwise-decaying learning rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: {params} parameters, {grads} gradients, {moments} moment entries")]
pub struct ShapeMismatch {
    pub params: usize,
    pub grads: usize,
    pub moments: usize,
}

/// Learning-rate schedule: `max(lr − decay·⌊step/interval⌋, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_interval: u64,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            decay: 5e-5,
            decay_interval: 1000,
            lr_floor: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0 && self.lr_floor > 0.0) {
            return Err("lr and lr_floor must be positive".into());
        }
        if self.decay < 0.0 || self.decay_interval == 0 {
            return Err("decay must be non-negative with a positive interval".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err("betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    /// Learning rate applied after `step` completed updates.
    pub fn effective_lr(&self, step: u64) -> f64 {
        let decayed = self.lr - self.decay * (step / self.decay_interval) as f64;
        decayed.max(self.lr_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.effective_lr(self.step)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), ShapeMismatch> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(ShapeMismatch {
                params: params.len(),
                grads: grads.len(),
                moments: self.m.len(),
            });
        }
        let c = self.config;
        let lr = self.effective_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}
