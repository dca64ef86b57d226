//! Bias-corrected Adam.

use crate::error::{NetError, Result};
use crate::graph::Gradients;
use crate::model::{round_f32, Bound, Params};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite() && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(NetError::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    /// One update; `grads[i]` belongs to the i-th tensor of `params`, and a
    /// missing gradient counts as zero. Parameters are kept at `f32` precision.
    pub fn update(&mut self, params: &mut Params, grads: &[Option<&[f64]>]) -> Result<()> {
        if grads.len() != self.first.len() || params.len() != self.first.len() {
            return Err(NetError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.first.len()
            )));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let tensors = params.tensors_mut()?;
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (((p, grad), m), v) in tensors.zip(grads).zip(&mut self.first).zip(&mut self.second) {
            if m.len() != p.len() || grad.is_some_and(|g| g.len() != p.len()) {
                return Err(NetError::Shape("gradient and parameter sizes differ".into()));
            }
            for i in 0..p.len() {
                let gi = grad.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                let w = &mut p.data_mut()[i];
                *w = round_f32(*w - step);
            }
        }
        Ok(())
    }

    /// Update from graph gradients of a set bound with [`Params::bind`].
    pub fn update_bound(&mut self, params: &mut Params, bound: &Bound, grads: &Gradients) -> Result<()> {
        let g: Vec<Option<&[f64]>> = bound.vars().iter().map(|v| grads.get(*v)).collect();
        self.update(params, &g)
    }
}
