//! Oversmoothing and oversquashing diagnostics: Dirichlet energy, Jacobian
//! sensitivity, filter activation, plus the two theorem harnesses.

mod bound;
mod reach;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bound::{
    bound_matrix, random_bound_table, sensitivity_bound, sensitivity_bound_suite, BoundModel, BoundRow, BoundSuiteReport, BoundTable,
    SensitivityBoundInputs,
};
pub use reach::{
    construct_along, find_walk, reachability_construct, reachability_suite, ReachSuiteReport, Reachability,
};

use crate::amp::AdaptiveModel;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{AmpError, Result};
use crate::graphs::{Graph, GraphBatch};

/// `(1/n) Σ_{(u→v)} ‖h_u − h_v‖²` over the directed edges of `g`.
pub fn dirichlet_energy(g: &Graph, h: &Tensor) -> Result<f64> {
    if h.shape().len() != 2 || h.rows() != g.n() {
        return Err(AmpError::shape(
            "dirichlet_energy",
            format!("embeddings {:?} for {} nodes", h.shape(), g.n()),
        ));
    }
    let total: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| {
            h.row(u)
                .iter()
                .zip(h.row(v))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / g.n() as f64)
}

/// Dense Jacobian between two `n × d` node-embedding matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub n: usize,
    pub d: usize,
    data: Vec<f64>,
}

impl Jacobian {
    /// `∂ out[v][j] / ∂ in[u][i]`.
    pub fn get(&self, v: usize, u: usize, j: usize, i: usize) -> f64 {
        self.data[((v * self.n + u) * self.d + j) * self.d + i]
    }

    /// Entrywise L¹ norm of the `d × d` block `∂h_v / ∂h_u`.
    pub fn block_l1(&self, v: usize, u: usize) -> f64 {
        let start = (v * self.n + u) * self.d * self.d;
        self.data[start..start + self.d * self.d].iter().map(|x| x.abs()).sum()
    }

    /// One vector-Jacobian product per output entry.
    pub fn of(out: Var<'_>, input: Var<'_>) -> Result<Self> {
        let (n, d) = input.value().dims2();
        if out.value().dims2() != (n, d) {
            return Err(AmpError::shape(
                "jacobian",
                format!("output {:?} vs input {:?}", out.shape(), input.shape()),
            ));
        }
        let mut data = vec![0.0; n * n * d * d];
        for v in 0..n {
            for j in 0..d {
                let mut seed = Tensor::zeros(&[n, d]);
                seed.set(v, j, 1.0);
                let grads = out.tape().backward_seeded(out, seed)?;
                let Some(g) = grads.wrt(input) else { continue };
                for u in 0..n {
                    for i in 0..d {
                        data[((v * n + u) * d + j) * d + i] = g.get(u, i);
                    }
                }
            }
        }
        Ok(Self { n, d, data })
    }
}

fn check_cut(model: &AdaptiveModel, layer: usize, last: usize) -> Result<()> {
    if layer == 0 || layer > last || last > model.active_layers() {
        return Err(AmpError::contract(format!(
            "sensitivity needs 1 ≤ ℓ ≤ L ≤ {}, got ℓ = {layer}, L = {last}",
            model.active_layers()
        )));
    }
    Ok(())
}

/// Jacobian of layer-`last` embeddings with respect to layer-`layer`
/// embeddings (layers are 1-based; layer 1 is the input encoding).
pub fn layer_jacobian(model: &AdaptiveModel, g: &Graph, layer: usize, last: usize) -> Result<Jacobian> {
    check_cut(model, layer, last)?;
    let batch = GraphBatch::single(g)?;
    let tape = Tape::new();
    let fw = model.forward_layers(&tape, &batch, layer)?;
    let cut = tape.leaf(fw.embeddings[layer - 1].value());
    let out = if last == layer {
        cut
    } else {
        let (hs, _) = model.propagate(&tape, &batch, fw.x, cut, layer, last)?;
        *hs.last().expect("at least one propagated layer")
    };
    Jacobian::of(out, cut)
}

/// `Σ_v ‖∂h_v^L / ∂h_u^ℓ‖₁` for source node `u`.
pub fn sensitivity(model: &AdaptiveModel, g: &Graph, u: usize, layer: usize, last: usize) -> Result<f64> {
    if u >= g.n() {
        return Err(AmpError::Index {
            op: "sensitivity",
            index: u,
            len: g.n(),
        });
    }
    let jac = layer_jacobian(model, g, layer, last)?;
    Ok((0..g.n()).map(|v| jac.block_l1(v, u)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// `fractions[i]` belongs to the filter gating messages into layer
    /// `i + 2`.
    pub fractions: Vec<f64>,
    /// True when the model does not filter; fractions are then all ones.
    pub no_filter: bool,
}

/// Mean gate value per filtered layer, averaged over graphs.
pub fn filter_stats(model: &AdaptiveModel, graphs: &[Graph]) -> Result<FilterStats> {
    let count = model.active_layers().saturating_sub(1);
    if model.blocks[..count].iter().all(|b| b.filter.is_none()) {
        return Ok(FilterStats {
            fractions: vec![1.0; count],
            no_filter: true,
        });
    }
    if graphs.is_empty() {
        return Err(AmpError::contract("filter statistics need at least one graph"));
    }
    let mut sums = vec![0.0; count];
    for g in graphs {
        let tape = Tape::new();
        let fw = model.forward_all(&tape, &GraphBatch::single(g)?)?;
        for (s, f) in sums.iter_mut().zip(&fw.filters) {
            let f = f.map(|f| f.value()).unwrap_or_else(|| Tensor::ones(&[g.n(), model.config.dim]));
            *s += f.sum() / f.numel() as f64;
        }
    }
    Ok(FilterStats {
        fractions: sums.into_iter().map(|s| s / graphs.len() as f64).collect(),
        no_filter: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    /// Graphs used for the (costly) sensitivity estimate.
    pub sensitivity_graphs: usize,
    /// Source nodes sampled per graph; all nodes when the graph is smaller.
    pub sensitivity_nodes: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            sensitivity_graphs: 4,
            sensitivity_nodes: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub dirichlet_energy: f64,
    /// Mean over sampled sources of `Σ_v ‖∂h_v^L̂ / ∂h_u^ℓ‖₁`.
    pub sensitivity: f64,
    /// Activation fraction of the filter gating messages into this layer;
    /// `None` for layer 1.
    pub filter_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub layers: Vec<LayerDiagnostics>,
    pub no_filter: bool,
    pub bound_table: Option<BoundTable>,
}

/// Per-layer energy, sensitivity towards the last active layer and filter
/// activation over `graphs`.
pub fn diagnose(model: &AdaptiveModel, graphs: &[Graph], opts: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    if graphs.is_empty() {
        return Err(AmpError::contract("diagnostics need at least one graph"));
    }
    let l_hat = model.active_layers();
    let mut energy = vec![0.0; l_hat];
    for g in graphs {
        let (_, embs) = model.forward_values(&GraphBatch::single(g)?)?;
        for (e, h) in energy.iter_mut().zip(&embs) {
            *e += dirichlet_energy(g, h)?;
        }
    }
    let mut sens = vec![0.0; l_hat];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let used = &graphs[..opts.sensitivity_graphs.clamp(1, graphs.len())];
    for g in used {
        let sources: Vec<usize> = if g.n() <= opts.sensitivity_nodes {
            (0..g.n()).collect()
        } else {
            sample(&mut rng, g.n(), opts.sensitivity_nodes).into_vec()
        };
        for (layer, s) in sens.iter_mut().enumerate() {
            let jac = layer_jacobian(model, g, layer + 1, l_hat)?;
            let total: f64 = sources
                .iter()
                .map(|&u| (0..g.n()).map(|v| jac.block_l1(v, u)).sum::<f64>())
                .sum();
            *s += total / sources.len() as f64;
        }
    }
    let stats = filter_stats(model, graphs)?;
    let layers = (1..=l_hat)
        .map(|l| LayerDiagnostics {
            layer: l,
            dirichlet_energy: energy[l - 1] / graphs.len() as f64,
            sensitivity: sens[l - 1] / used.len() as f64,
            filter_fraction: (l > 1).then(|| stats.fractions[l - 2]),
        })
        .collect();
    Ok(DiagnosticsReport {
        layers,
        no_filter: stats.no_filter,
        bound_table: None,
    })
}

#[cfg(test)]
mod tests;
