use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{compute_targets, Graph, TaskKind, TaskSpec};
use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};

pub const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Edge probability drawn uniformly from [0.1, 0.3] per graph.
    ErdosRenyi,
    /// Attachment count drawn from {1, 2} per graph.
    BarabasiAlbert,
    Grid,
    Line,
    Star,
    Cycle,
    Caterpillar,
    Complete,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 8] = [
        GeneratorKind::ErdosRenyi,
        GeneratorKind::BarabasiAlbert,
        GeneratorKind::Grid,
        GeneratorKind::Line,
        GeneratorKind::Star,
        GeneratorKind::Cycle,
        GeneratorKind::Caterpillar,
        GeneratorKind::Complete,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::ErdosRenyi => "erdos_renyi",
            GeneratorKind::BarabasiAlbert => "barabasi_albert",
            GeneratorKind::Grid => "grid",
            GeneratorKind::Line => "line",
            GeneratorKind::Star => "star",
            GeneratorKind::Cycle => "cycle",
            GeneratorKind::Caterpillar => "caterpillar",
            GeneratorKind::Complete => "complete",
        }
    }
}

/// Undirected edge pairs `(u, v)` with `u < v`. Random generators may
/// return disconnected graphs; the caller retries.
pub fn generate_topology(kind: GeneratorKind, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    match kind {
        GeneratorKind::Line => pairs.extend((1..n).map(|v| (v - 1, v))),
        GeneratorKind::Cycle => {
            pairs.extend((1..n).map(|v| (v - 1, v)));
            if n > 2 {
                pairs.push((0, n - 1));
            }
        }
        GeneratorKind::Star => pairs.extend((1..n).map(|v| (0, v))),
        GeneratorKind::Complete => {
            for u in 0..n {
                pairs.extend((u + 1..n).map(|v| (u, v)));
            }
        }
        GeneratorKind::Grid => {
            let rows = ((n as f64).sqrt().floor() as usize).max(1);
            let cols = n.div_ceil(rows);
            for i in 0..n {
                let (r, c) = (i / cols, i % cols);
                if c + 1 < cols && i + 1 < n {
                    pairs.push((i, i + 1));
                }
                if r > 0 {
                    pairs.push((i - cols, i));
                }
            }
        }
        GeneratorKind::Caterpillar => {
            let spine = n.div_ceil(2);
            pairs.extend((1..spine).map(|v| (v - 1, v)));
            for leaf in spine..n {
                pairs.push((rng.random_range(0..spine), leaf));
            }
        }
        GeneratorKind::ErdosRenyi => {
            let p = rng.random_range(0.1..=0.3);
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < p {
                        pairs.push((u, v));
                    }
                }
            }
        }
        GeneratorKind::BarabasiAlbert => {
            let m = rng.random_range(1..=2usize).min(n.saturating_sub(1)).max(1);
            // seed clique on m + 1 nodes, then preferential attachment
            let core = (m + 1).min(n);
            let mut targets_pool = Vec::new();
            for u in 0..core {
                for v in u + 1..core {
                    pairs.push((u, v));
                    targets_pool.extend([u, v]);
                }
            }
            for new in core..n {
                let mut chosen = Vec::with_capacity(m);
                while chosen.len() < m {
                    let t = *targets_pool.choose(rng).unwrap_or(&0);
                    if !chosen.contains(&t) {
                        chosen.push(t);
                    }
                }
                for &t in &chosen {
                    pairs.push((t, new));
                    targets_pool.extend([t, new]);
                }
            }
        }
    }
    pairs
}

/// A connected graph of `n` nodes with Gaussian node features and the task
/// target filled in. Random topologies are redrawn until connected, up to
/// [`MAX_ATTEMPTS`] times.
pub fn generate_graph(
    kind: GeneratorKind,
    n: usize,
    task: TaskSpec,
    rng: &mut impl Rng,
) -> Result<Graph> {
    if n == 0 {
        return Err(AmpError::contract("graph size must be positive"));
    }
    for _ in 0..MAX_ATTEMPTS {
        let pairs = generate_topology(kind, n, rng);
        let mut features = Tensor::zeros(&[n, task.feature_dim()]);
        for v in 0..n {
            features.set(v, 0, StandardNormal.sample(rng));
        }
        if task.kind == TaskKind::Sssp {
            let source = rng.random_range(0..n);
            features.set(source, 1, 1.0);
        }
        let mut g = Graph::undirected(n, &pairs, features)?;
        if !g.is_connected() {
            continue;
        }
        g.generator = kind.name().to_string();
        compute_targets(&mut g, task)?;
        return Ok(g);
    }
    Err(AmpError::GenerationFailed {
        generator: kind.name().to_string(),
        attempts: MAX_ATTEMPTS,
    })
}
