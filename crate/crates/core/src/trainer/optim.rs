use serde::{Deserialize, Serialize};

use crate::encoder::{ModelParams, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_WARMUP_PROPORTION: f64 = 0.1;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_proportion: f64,
    pub total_steps: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64, total_steps: u64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_proportion: DEFAULT_WARMUP_PROPORTION,
            total_steps,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

/// Adam moments plus the step counter and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ModelParams) -> bool {
        self.m.len() == params.tensors.len()
            && self
                .m
                .iter()
                .zip(&self.v)
                .zip(&params.tensors)
                .all(|((m, v), p)| m.shape() == p.shape() && v.shape() == p.shape())
    }

    /// Learning rate for the 1-based step `t`: linear warmup over the first
    /// `warmup_proportion · total_steps` steps, constant afterwards.
    pub fn lr_at(&self, t: u64) -> f64 {
        let warmup = self.config.warmup_proportion * self.config.total_steps as f64;
        if warmup <= 0.0 {
            self.config.lr
        } else {
            self.config.lr * (t as f64 / warmup).min(1.0)
        }
    }

    /// Clips `grads` and applies one Adam update. Returns the learning rate used.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &mut [Tensor]) -> Result<f64> {
        if !self.matches(params) || grads.len() != params.tensors.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        if let Some(max_norm) = self.config.clip_norm {
            let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                grads.iter_mut().for_each(|g| g.scale_assign(s));
            }
        }
        let t = self.step + 1;
        let lr = self.lr_at(t);
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powf(t as f64);
        let bc2 = 1.0 - beta2.powf(t as f64);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(grads.iter())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step = t;
        Ok(lr)
    }
}
