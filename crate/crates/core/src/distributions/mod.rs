//! Variational distributions over network depth.
//!
//! Every family here is unbounded as a family but each member is truncated
//! to a finite support at a quantile level `c`, so expectations over depth
//! are finite sums.
//!
//! Index convention: the distributions live on `{0, 1, 2, …}` while layers
//! are numbered from 1. Integer `x` carries the mass of layer `x + 1`.

mod bounds;
mod prior;
mod suite;

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

pub use bounds::{binary_search_quantile, dfn_lower_bound, dfn_quantile_bounds, dfn_upper_bound};
pub use prior::{depth_elbo_terms, depth_elbo_terms_from_weights, LayerPrior};
pub use suite::{quantile_suite, scan_quantile, QuantileSuiteReport};

use crate::autodiff::{stack, Parameter, Tape, Tensor, Var};
use crate::error::{AmpError, Result};
use crate::special::{erf, erf_interval, ln_factorial};

pub const DEFAULT_QUANTILE: f64 = 0.99;
pub const DEFAULT_MAX_SUPPORT: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DepthFamily {
    /// Rate stored as its logarithm.
    Poisson { log_rate: Parameter },
    /// Discrete folded normal; σ stored as its logarithm.
    FoldedNormal { mu: Parameter, log_sigma: Parameter },
    /// Mixture of discrete folded normals with softmax weights.
    Mixture {
        mu: Parameter,
        log_sigma: Parameter,
        logits: Parameter,
    },
    /// Point mass on a fixed number of layers; nothing to learn.
    Fixed { layers: usize },
}

/// Learnable truncated distribution `q(ℓ; λ)` over the number of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVariational {
    family: DepthFamily,
    quantile: f64,
    max_support: usize,
    support: usize,
}

fn dfn_pmf(mu: f64, sigma: f64, x: usize) -> f64 {
    let s = sigma * SQRT_2;
    let x = x as f64;
    erf_interval((x - mu) / s, (x + 1.0 - mu) / s) + erf_interval((x + mu) / s, (x + 1.0 + mu) / s)
}

/// Folded-normal c.d.f. at `x + 1`, which is the discrete c.m.f. at `x`.
fn dfn_cmf(mu: f64, sigma: f64, x: usize) -> f64 {
    let s = sigma * SQRT_2;
    let y = x as f64 + 1.0;
    0.5 * (erf((y - mu) / s) + erf((y + mu) / s))
}

fn poisson_pmf(rate: f64, x: usize) -> f64 {
    (x as f64 * rate.ln() - rate - ln_factorial(x)).exp()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl LayerVariational {
    fn build(family: DepthFamily, quantile: f64) -> Result<Self> {
        bounds::check_level(quantile)?;
        let mut d = Self {
            family,
            quantile,
            max_support: DEFAULT_MAX_SUPPORT,
            support: 1,
        };
        d.truncate()?;
        Ok(d)
    }

    pub fn poisson(rate: f64, quantile: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(AmpError::contract(format!("Poisson rate must be positive, got {rate}")));
        }
        Self::build(
            DepthFamily::Poisson {
                log_rate: Parameter::new("depth.log_rate", Tensor::scalar(rate.ln())),
            },
            quantile,
        )
    }

    pub fn folded_normal(mu: f64, sigma: f64, quantile: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(AmpError::contract(format!("σ must be positive, got {sigma}")));
        }
        Self::build(
            DepthFamily::FoldedNormal {
                mu: Parameter::new("depth.mu", Tensor::scalar(mu)),
                log_sigma: Parameter::new("depth.log_sigma", Tensor::scalar(sigma.ln())),
            },
            quantile,
        )
    }

    /// Components given as `(μ, σ, weight)`; weights are normalized.
    pub fn mixture(components: &[(f64, f64, f64)], quantile: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(AmpError::contract("mixture needs at least one component"));
        }
        if components.iter().any(|&(_, s, w)| !(s > 0.0) || !(w > 0.0)) {
            return Err(AmpError::contract("mixture σ and weights must be positive"));
        }
        let mus = components.iter().map(|c| c.0).collect();
        let log_sigmas = components.iter().map(|c| c.1.ln()).collect();
        let logits = components.iter().map(|c| c.2.ln()).collect();
        Self::build(
            DepthFamily::Mixture {
                mu: Parameter::new("depth.mu", Tensor::vector(mus)?),
                log_sigma: Parameter::new("depth.log_sigma", Tensor::vector(log_sigmas)?),
                logits: Parameter::new("depth.logits", Tensor::vector(logits)?),
            },
            quantile,
        )
    }

    pub fn fixed(layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(AmpError::contract("a network needs at least one layer"));
        }
        Ok(Self {
            family: DepthFamily::Fixed { layers },
            quantile: DEFAULT_QUANTILE,
            max_support: layers.max(DEFAULT_MAX_SUPPORT),
            support: layers,
        })
    }

    pub fn with_max_support(mut self, cap: usize) -> Self {
        self.max_support = cap;
        self
    }

    pub fn family(&self) -> &DepthFamily {
        &self.family
    }

    pub fn quantile_level(&self) -> f64 {
        self.quantile
    }

    pub fn max_support(&self) -> usize {
        self.max_support
    }

    /// Number of layers `L̂` covered by the cached truncation.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn is_learnable(&self) -> bool {
        !matches!(self.family, DepthFamily::Fixed { .. })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match &self.family {
            DepthFamily::Poisson { log_rate } => vec![log_rate],
            DepthFamily::FoldedNormal { mu, log_sigma } => vec![mu, log_sigma],
            DepthFamily::Mixture {
                mu,
                log_sigma,
                logits,
            } => vec![mu, log_sigma, logits],
            DepthFamily::Fixed { .. } => vec![],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match &mut self.family {
            DepthFamily::Poisson { log_rate } => vec![log_rate],
            DepthFamily::FoldedNormal { mu, log_sigma } => vec![mu, log_sigma],
            DepthFamily::Mixture {
                mu,
                log_sigma,
                logits,
            } => vec![mu, log_sigma, logits],
            DepthFamily::Fixed { .. } => vec![],
        }
    }

    /// Mixture components as `(μ, σ, weight)`; a single DFN is one
    /// component of weight 1.
    pub fn components(&self) -> Vec<(f64, f64, f64)> {
        match &self.family {
            DepthFamily::FoldedNormal { mu, log_sigma } => {
                vec![(mu.value.item(), log_sigma.value.item().exp(), 1.0)]
            }
            DepthFamily::Mixture {
                mu,
                log_sigma,
                logits,
            } => {
                let w = softmax(logits.value.data());
                mu.value
                    .data()
                    .iter()
                    .zip(log_sigma.value.data())
                    .zip(w)
                    .map(|((&m, &ls), w)| (m, ls.exp(), w))
                    .collect()
            }
            _ => vec![],
        }
    }

    /// Human-readable parameters in natural units (rate, μ, σ, weights).
    pub fn describe(&self) -> Vec<(String, f64)> {
        match &self.family {
            DepthFamily::Poisson { log_rate } => vec![("rate".into(), log_rate.value.item().exp())],
            DepthFamily::Fixed { layers } => vec![("layers".into(), *layers as f64)],
            _ => self
                .components()
                .into_iter()
                .enumerate()
                .flat_map(|(i, (m, s, w))| {
                    [
                        (format!("mu{i}"), m),
                        (format!("sigma{i}"), s),
                        (format!("w{i}"), w),
                    ]
                })
                .collect(),
        }
    }

    pub fn pmf(&self, x: usize) -> f64 {
        match &self.family {
            DepthFamily::Poisson { log_rate } => poisson_pmf(log_rate.value.item().exp(), x),
            DepthFamily::Fixed { layers } => {
                if x + 1 == *layers {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self
                .components()
                .iter()
                .map(|&(m, s, w)| w * dfn_pmf(m, s, x))
                .sum(),
        }
    }

    pub fn cmf(&self, x: usize) -> f64 {
        match &self.family {
            DepthFamily::Poisson { .. } => (0..=x).map(|i| self.pmf(i)).sum::<f64>().min(1.0),
            DepthFamily::Fixed { layers } => {
                if x + 1 >= *layers {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self
                .components()
                .iter()
                .map(|&(m, s, w)| w * dfn_cmf(m, s, x))
                .sum(),
        }
    }

    /// Bracket around the integer quantile at level `c`, for the folded
    /// normal and mixture families.
    pub fn quantile_bounds(&self, c: f64) -> Result<(usize, usize)> {
        bounds::check_level(c)?;
        let comps = self.components();
        if comps.is_empty() {
            return Err(AmpError::contract(
                "closed-form quantile bounds exist only for folded-normal families",
            ));
        }
        let mut lower = usize::MAX;
        let mut upper = 0;
        for &(m, s, _) in &comps {
            let (lo, hi) = dfn_quantile_bounds(m, s, c)?;
            lower = lower.min(lo);
            upper = upper.max(hi);
        }
        Ok((lower, upper))
    }

    /// `min {x : cmf(x) ≥ c}` on the integer scale.
    pub fn quantile(&self, c: f64) -> Result<usize> {
        bounds::check_level(c)?;
        match &self.family {
            DepthFamily::Fixed { layers } => Ok(layers - 1),
            DepthFamily::Poisson { .. } => {
                let mut acc = 0.0;
                for x in 0..=self.max_support {
                    acc += self.pmf(x);
                    if acc >= c {
                        return Ok(x);
                    }
                }
                Err(AmpError::GrowthCap {
                    cap: self.max_support,
                })
            }
            _ => {
                let (lo, hi) = self.quantile_bounds(c)?;
                if lo > self.max_support {
                    return Err(AmpError::GrowthCap {
                        cap: self.max_support,
                    });
                }
                Ok(binary_search_quantile(|x| self.cmf(x), c, lo, hi))
            }
        }
    }

    /// Recomputes and caches `L̂`, the number of layers whose combined mass
    /// reaches the quantile level (at least one).
    pub fn truncate(&mut self) -> Result<usize> {
        let layers = (self.quantile(self.quantile)? + 1).max(1);
        if layers > self.max_support {
            return Err(AmpError::GrowthCap {
                cap: self.max_support,
            });
        }
        self.support = layers;
        Ok(layers)
    }

    /// Layer weights `q̂(1..=L̂)`, renormalized over the truncated support.
    pub fn renormalized_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.support).map(|x| self.pmf(x)).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    }

    /// Raw (unnormalized) masses of layers `1..=L̂`, tape-connected to the
    /// distribution parameters.
    pub fn support_pmf<'t>(&self, tape: &'t Tape) -> Result<Var<'t>> {
        let n = self.support;
        let xs = Tensor::vector((0..n).map(|x| x as f64).collect())?;
        match &self.family {
            DepthFamily::Poisson { log_rate } => {
                let lr = tape.param(log_rate);
                let rate = lr.exp()?;
                let lnfact = Tensor::vector((0..n).map(ln_factorial).collect())?;
                tape.constant(xs)
                    .mul(lr)?
                    .sub(rate)?
                    .sub(tape.constant(lnfact))?
                    .exp()
            }
            DepthFamily::FoldedNormal { mu, log_sigma } => {
                let m = tape.param(mu);
                let s = tape.param(log_sigma).exp()?;
                dfn_pmf_var(tape, &xs, m, s)
            }
            DepthFamily::Mixture {
                mu,
                log_sigma,
                logits,
            } => {
                let m = tape.param(mu);
                let s = tape.param(log_sigma).exp()?;
                let l = tape.param(logits);
                let e = l.exp()?;
                let w = e.div(e.sum()?)?;
                let mut total: Option<Var<'t>> = None;
                for i in 0..mu.value.numel() {
                    let comp = dfn_pmf_var(tape, &xs, m.index(i)?, s.index(i)?)?;
                    let term = comp.mul(w.index(i)?)?;
                    total = Some(match total {
                        None => term,
                        Some(t) => t.add(term)?,
                    });
                }
                Ok(total.expect("at least one component"))
            }
            DepthFamily::Fixed { layers } => {
                let mut one_hot = vec![0.0; n];
                one_hot[layers - 1] = 1.0;
                Ok(tape.constant(Tensor::vector(one_hot)?))
            }
        }
    }

    /// Probability mass at integer `x` as a tape scalar.
    pub fn pmf_var<'t>(&self, tape: &'t Tape, x: usize) -> Result<Var<'t>> {
        let mut probe = self.clone();
        probe.support = x + 1;
        probe.support_pmf(tape)?.index(x)
    }

    /// Renormalized layer weights `q̂(1..=L̂)` on the tape.
    pub fn layer_weights<'t>(&self, tape: &'t Tape) -> Result<Var<'t>> {
        let raw = self.support_pmf(tape)?;
        raw.div(raw.sum()?)
    }
}

fn dfn_pmf_var<'t>(tape: &'t Tape, xs: &Tensor, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
    let x = tape.constant(xs.clone());
    let s = sigma.scale(SQRT_2)?;
    let below = x.sub(mu)?;
    let lo1 = below.div(s)?;
    let hi1 = below.offset(1.0)?.div(s)?;
    let above = x.add(mu)?;
    let lo2 = above.div(s)?;
    let hi2 = above.offset(1.0)?.div(s)?;
    Var::erf_diff(lo1, hi1)?.add(Var::erf_diff(lo2, hi2)?)
}

/// Concatenates per-layer scalars into a weight-aligned vector.
pub fn stack_layers<'t>(tape: &'t Tape, items: &[Var<'t>]) -> Result<Var<'t>> {
    stack(tape, items)
}

#[cfg(test)]
mod tests;
