use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::LayerVariational;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{AmpError, Result};
use crate::special::{erf_interval, ln_factorial};

/// Floor inside the entropy logarithm so an underflowed weight contributes 0.
const LN_FLOOR: f64 = 1e-300;

/// Fixed prior `p(ℓ)` over the number of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerPrior {
    Uninformative,
    Poisson { rate: f64 },
    FoldedNormal { mu: f64, sigma: f64 },
}

impl LayerPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerPrior::Poisson { rate } if !(rate > 0.0) => Err(AmpError::contract(format!(
                "prior rate must be positive, got {rate}"
            ))),
            LayerPrior::FoldedNormal { sigma, .. } if !(sigma > 0.0) => Err(AmpError::contract(
                format!("prior σ must be positive, got {sigma}"),
            )),
            _ => Ok(()),
        }
    }

    /// `ln p(ℓ)` for layer `ℓ ≥ 1`, using the same `x = ℓ − 1` shift as the
    /// variational families. `None` for the uninformative prior.
    pub fn ln_prob(&self, layer: usize) -> Option<f64> {
        let x = layer.saturating_sub(1);
        match *self {
            LayerPrior::Uninformative => None,
            LayerPrior::Poisson { rate } => Some(x as f64 * rate.ln() - rate - ln_factorial(x)),
            LayerPrior::FoldedNormal { mu, sigma } => {
                let s = sigma * SQRT_2;
                let xf = x as f64;
                let p = erf_interval((xf - mu) / s, (xf + 1.0 - mu) / s)
                    + erf_interval((xf + mu) / s, (xf + 1.0 + mu) / s);
                Some(p.max(LN_FLOOR).ln())
            }
        }
    }
}

/// `(entropy, prior)` terms of the ELBO for a weight vector `q̂` over layers
/// `1..=len`, both tape-connected to whatever produced `weights`.
pub fn depth_elbo_terms_from_weights<'t>(
    tape: &'t Tape,
    weights: Var<'t>,
    prior: &LayerPrior,
) -> Result<(Var<'t>, Var<'t>)> {
    let entropy = weights
        .mul(weights.clamp_min(LN_FLOOR)?.ln()?)?
        .sum()?
        .neg()?;
    let n = weights.value().numel();
    let prior_term = match prior {
        LayerPrior::Uninformative => tape.scalar(0.0),
        p => {
            let lp = (1..=n).map(|l| p.ln_prob(l).unwrap_or(0.0)).collect();
            weights.mul(tape.constant(Tensor::vector(lp)?))?.sum()?
        }
    };
    Ok((entropy, prior_term))
}

pub fn depth_elbo_terms<'t>(
    tape: &'t Tape,
    dist: &LayerVariational,
    prior: &LayerPrior,
) -> Result<(Var<'t>, Var<'t>)> {
    let w = dist.layer_weights(tape)?;
    depth_elbo_terms_from_weights(tape, w, prior)
}
