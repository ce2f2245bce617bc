use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tensor};
use crate::error::{AmpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adam with decoupled weight decay. Moments are keyed by parameter name,
/// so parameters added mid-run (new layers) start from zero moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter in `params`, then zeroes their
    /// gradients. Parameters for which `decay` returns false skip weight
    /// decay.
    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut Parameter>,
        decay: impl Fn(&str) -> bool,
    ) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(AmpError::NonFinite {
                what: format!("gradient of {}", p.name()),
                graph: None,
            });
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for p in params {
            let (m, v) = self
                .moments
                .entry(p.name().to_owned())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let shrink = if decay(p.name()) {
                1.0 - c.lr * c.weight_decay
            } else {
                1.0
            };
            let g = p.grad.data();
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let mi = &mut m.data_mut()[i];
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g[i];
                let m_hat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g[i] * g[i];
                let v_hat = *vi / bc2;
                vals[i] = vals[i] * shrink - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter on a metric to minimize.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub counter: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            counter: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if metric < self.best || self.best_epoch.is_none() {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.counter = 0;
            StopDecision::Improved
        } else if self.counter >= self.patience {
            StopDecision::Stop
        } else {
            self.counter += 1;
            StopDecision::Continue
        }
    }
}
