use std::f64::consts::PI;

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Per-tensor scalar second moment with normalized gradients.
    NovoGrad,
    /// Per-coordinate moments with bias correction (decoupled decay).
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_averaging: bool,
    /// Step budget of the cosine schedule.
    pub total_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::NovoGrad,
            lr: 3e-3,
            beta1: 0.95,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_averaging: false,
            total_steps: 1000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.total_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// Cosine annealing from `lr0` to zero over `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    let s = step.min(total) as f64 / total.max(1) as f64;
    lr0 * (1.0 + (PI * s).cos()) / 2.0
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    /// One scalar per tensor for NovoGrad, one per coordinate for Adam.
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params
            .iter()
            .map(|p| match config.kind {
                OptimizerKind::NovoGrad => vec![0.0],
                OptimizerKind::Adam => vec![0.0; p.numel()],
            })
            .collect();
        Ok(Self { config, step: 0, m, v })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.config.lr, self.step, self.config.total_steps)
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer: {} params, {} grads",
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_lr();
        let c = self.config.clone();
        let first = self.step == 0;
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.params_mut().iter_mut().zip(grads).enumerate() {
            if g.len() != p.numel() {
                return Err(Error::shape(format!(
                    "gradient for {} has {} values, expected {}",
                    p.name,
                    g.len(),
                    p.numel()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match c.kind {
                OptimizerKind::NovoGrad => {
                    let norm2: f64 = g.iter().map(|x| x * x).sum();
                    v[0] = if first { norm2 } else { c.beta2 * v[0] + (1.0 - c.beta2) * norm2 };
                    let denom = v[0].sqrt() + c.eps;
                    let avg = if c.grad_averaging { 1.0 - c.beta1 } else { 1.0 };
                    for ((w, mk), gk) in p.data.iter_mut().zip(m.iter_mut()).zip(g) {
                        let d = gk / denom + c.weight_decay * *w;
                        *mk = c.beta1 * *mk + avg * d;
                        *w -= lr * *mk;
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for (((w, mk), vk), gk) in p.data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *mk = c.beta1 * *mk + (1.0 - c.beta1) * gk;
                        *vk = c.beta2 * *vk + (1.0 - c.beta2) * gk * gk;
                        let update = (*mk / bc1) / ((*vk / bc2).sqrt() + c.eps);
                        *w -= lr * (update + c.weight_decay * *w);
                    }
                }
            }
        }
        Ok(lr)
    }
}
