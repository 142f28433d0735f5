//! AdamW with decoupled weight decay.
//!
//! ```text
//! p ← p · (1 − lr·wd)
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! p ← p − lr · m̂ / (√v̂ + ε)      m̂ = m / (1 − β₁ᵗ), v̂ = v / (1 − β₂ᵗ)
//! ```
//!
//! Decay applies to every parameter, matrices and vectors alike.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter, in the order
/// the parameters were handed to [`AdamW::new`].
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f32>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = first.clone();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from each parameter's `grad` (a missing gradient
    /// counts as zero). Fails without touching anything if a gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(dim_err!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first[i].len() {
                return Err(dim_err!("parameter {} changed size", i));
            }
            if let Some(g) = p.grad() {
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training(format!(
                        "non-finite gradient {} at element {} of parameter {} (step {})",
                        g[j],
                        j,
                        i,
                        self.step + 1
                    )));
                }
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = (1.0 - (beta1 as f64).powi(self.step as i32)) as f32;
        let bc2 = (1.0 - (beta2 as f64).powi(self.step as i32)) as f32;
        let decay = 1.0 - lr * weight_decay;

        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().map(<[f32]>::to_vec);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                data[j] = data[j] * decay - lr * update;
            }
        }
        Ok(())
    }
}
