use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::{glorot, Linear, Mlp};
use crate::autodiff::{scatter_aggregate, Parameter, ReduceKind, Tape, Tensor, Var};
use crate::error::{AmpError, Result};
use crate::graphs::GraphBatch;

pub const ADGN_EPSILON: f64 = 0.1;
pub const ADGN_GAMMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpKind {
    Gcn,
    Gin,
    Adgn,
}

impl MpKind {
    pub fn name(&self) -> &'static str {
        match self {
            MpKind::Gcn => "gcn",
            MpKind::Gin => "gin",
            MpKind::Adgn => "adgn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MpLayer {
    /// `tanh(H W_self + b + Σ c_uv (F⊙H)_u W_nbr)`
    Gcn { self_map: Linear, w_nbr: Parameter },
    /// `tanh(MLP((1 + ε) H + Σ (F⊙H)_u))`
    Gin { mlp: Mlp, eps: f64 },
    /// `H + ε tanh(H Mᵀ + Σ (F⊙H)_u V + b)` with `M = W − Wᵀ − γI`.
    Adgn {
        w: Parameter,
        v: Parameter,
        b: Parameter,
        step: f64,
        gamma: f64,
    },
}

/// Sum of (optionally edge-weighted) rows of `msgs` over incoming edges.
/// A batch with no edges aggregates to zeros.
pub fn aggregate<'t>(
    tape: &'t Tape,
    batch: &GraphBatch,
    msgs: Var<'t>,
    coef: Option<&[f64]>,
) -> Result<Var<'t>> {
    let d = msgs.value().cols();
    if batch.num_edges() == 0 {
        return Ok(tape.constant(Tensor::zeros(&[batch.n, d])));
    }
    let mut per_edge = msgs.gather_rows(&batch.src)?;
    if let Some(c) = coef {
        per_edge = per_edge.scale_rows(c.to_vec())?;
    }
    scatter_aggregate(per_edge, &batch.dst, batch.n, ReduceKind::Sum)
}

impl MpLayer {
    pub fn new(kind: MpKind, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            MpKind::Gcn => MpLayer::Gcn {
                self_map: Linear::new(&format!("{name}.self"), d, d, rng),
                w_nbr: Parameter::new(format!("{name}.nbr.w"), glorot(d, d, rng)),
            },
            MpKind::Gin => MpLayer::Gin {
                mlp: Mlp::new(&format!("{name}.mlp"), d, d, d, rng),
                eps: 0.0,
            },
            MpKind::Adgn => MpLayer::Adgn {
                w: Parameter::new(format!("{name}.w"), glorot(d, d, rng)),
                v: Parameter::new(format!("{name}.v"), glorot(d, d, rng)),
                b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[d])),
                step: ADGN_EPSILON,
                gamma: ADGN_GAMMA,
            },
        }
    }

    pub fn kind(&self) -> MpKind {
        match self {
            MpLayer::Gcn { .. } => MpKind::Gcn,
            MpLayer::Gin { .. } => MpKind::Gin,
            MpLayer::Adgn { .. } => MpKind::Adgn,
        }
    }

    /// The antisymmetric recurrent matrix `W − Wᵀ − γI` of an ADGN layer.
    pub fn adgn_matrix(&self) -> Option<Tensor> {
        match self {
            MpLayer::Adgn { w, gamma, .. } => {
                let wt = w.value.transpose();
                let d = w.value.rows();
                let mut m = w.value.zip_map(&wt, |a, b| a - b);
                for i in 0..d {
                    m.set(i, i, m.get(i, i) - gamma);
                }
                Some(m)
            }
            _ => None,
        }
    }

    /// One message-passing step. `filter = None` skips the filter product
    /// entirely, which is the plain layer.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        batch: &GraphBatch,
        h: Var<'t>,
        filter: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        if h.value().rows() != batch.n {
            return Err(AmpError::shape(
                "mp_forward",
                format!("{} embedding rows for {} nodes", h.value().rows(), batch.n),
            ));
        }
        let msgs = match filter {
            Some(f) => f.mul(h)?,
            None => h,
        };
        match self {
            MpLayer::Gcn { self_map, w_nbr } => {
                let agg = aggregate(tape, batch, msgs, Some(&batch.gcn_coef))?;
                self_map
                    .forward(tape, h)?
                    .add(agg.matmul(tape.param(w_nbr))?)?
                    .tanh()
            }
            MpLayer::Gin { mlp, eps } => {
                let agg = aggregate(tape, batch, msgs, None)?;
                let x = if *eps == 0.0 { h } else { h.scale(1.0 + eps)? };
                mlp.forward(tape, x.add(agg)?)?.tanh()
            }
            MpLayer::Adgn {
                w,
                v,
                b,
                step,
                gamma,
            } => {
                let wv = tape.param(w);
                let d = w.value.rows();
                let m = wv
                    .sub(wv.transpose()?)?
                    .sub(tape.constant(Tensor::identity(d).map(|x| x * gamma)))?;
                let agg = aggregate(tape, batch, msgs, None)?.matmul(tape.param(v))?;
                let inner = h
                    .matmul(m.transpose()?)?
                    .add(agg)?
                    .add_row(tape.param(b))?
                    .tanh()?;
                h.add(inner.scale(*step)?)
            }
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            MpLayer::Gcn { self_map, w_nbr } => {
                let mut p = self_map.parameters();
                p.push(w_nbr);
                p
            }
            MpLayer::Gin { mlp, .. } => mlp.parameters(),
            MpLayer::Adgn { w, v, b, .. } => vec![w, v, b],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            MpLayer::Gcn { self_map, w_nbr } => {
                let mut p = self_map.parameters_mut();
                p.push(w_nbr);
                p
            }
            MpLayer::Gin { mlp, .. } => mlp.parameters_mut(),
            MpLayer::Adgn { w, v, b, .. } => vec![w, v, b],
        }
    }
}
