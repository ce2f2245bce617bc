use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::Mlp;
use crate::autodiff::{scatter_aggregate, Parameter, ReduceKind, Tape, Var};
use crate::error::Result;
use crate::graphs::{GraphBatch, TargetLevel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Readout {
    Node { rho: Mlp },
    Graph { rho1: Mlp, rho2: Mlp },
}

/// Per-graph mean of node rows.
pub fn mean_pool<'t>(h: Var<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
    scatter_aggregate(h, &batch.graph_of_node, batch.num_graphs, ReduceKind::Mean)
}

impl Readout {
    pub fn new(level: TargetLevel, name: &str, d: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        match level {
            TargetLevel::Node => Readout::Node {
                rho: Mlp::new(&format!("{name}.rho"), d, d, out, rng),
            },
            TargetLevel::Graph => Readout::Graph {
                rho1: Mlp::new(&format!("{name}.rho1"), d, d, d, rng),
                rho2: Mlp::new(&format!("{name}.rho2"), d, d, out, rng),
            },
        }
    }

    pub fn level(&self) -> TargetLevel {
        match self {
            Readout::Node { .. } => TargetLevel::Node,
            Readout::Graph { .. } => TargetLevel::Graph,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Readout::Node { rho } => rho.fan_out(),
            Readout::Graph { rho2, .. } => rho2.fan_out(),
        }
    }

    /// `n × t` for node-level, `B × t` for graph-level.
    pub fn forward<'t>(&self, tape: &'t Tape, batch: &GraphBatch, h: Var<'t>) -> Result<Var<'t>> {
        match self {
            Readout::Node { rho } => rho.forward(tape, h),
            Readout::Graph { rho1, rho2 } => {
                let pooled = mean_pool(rho1.forward(tape, h)?, batch)?;
                rho2.forward(tape, pooled)
            }
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Readout::Node { rho } => rho.parameters(),
            Readout::Graph { rho1, rho2 } => {
                let mut p = rho1.parameters();
                p.extend(rho2.parameters());
                p
            }
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Readout::Node { rho } => rho.parameters_mut(),
            Readout::Graph { rho1, rho2 } => {
                let mut p = rho1.parameters_mut();
                p.extend(rho2.parameters_mut());
                p
            }
        }
    }
}
