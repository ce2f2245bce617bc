//! Attributed graphs, synthetic generators, shortest-path targets and
//! dataset assembly.

mod batch;
mod dataset;
mod generators;
mod oracles;

use serde::{Deserialize, Serialize};

pub use batch::GraphBatch;
pub use dataset::{
    build_dataset, read_jsonl, write_jsonl, Dataset, DatasetSpec, Manifest, Preset, Split,
};
pub use generators::{generate_graph, generate_topology, GeneratorKind};
pub use oracles::{bfs_distances, compute_targets, diameter, eccentricities, sssp};

use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Diameter,
    Sssp,
    Eccentricity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLevel {
    Graph,
    Node,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self { kind }
    }

    pub fn level(&self) -> TargetLevel {
        match self.kind {
            TaskKind::Diameter => TargetLevel::Graph,
            TaskKind::Sssp | TaskKind::Eccentricity => TargetLevel::Node,
        }
    }

    /// Input width: one Gaussian feature, plus a source flag for SSSP.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            TaskKind::Sssp => 2,
            _ => 1,
        }
    }

    pub fn target_dim(&self) -> usize {
        1
    }
}

/// Directed view of an undirected graph: every undirected edge is stored as
/// two oriented ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    node_targets: Option<Tensor>,
    graph_target: Option<Vec<f64>>,
    pub generator: String,
    pub seed: u64,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>, features: Tensor) -> Result<Self> {
        if n == 0 {
            return Err(AmpError::contract("graph needs at least one node"));
        }
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(AmpError::Index {
                op: "graph",
                index: u.max(v),
                len: n,
            });
        }
        if features.rows() != n || features.shape().len() != 2 {
            return Err(AmpError::shape(
                "graph",
                format!("features {:?} for {n} nodes", features.shape()),
            ));
        }
        Ok(Self {
            n,
            edges,
            features,
            node_targets: None,
            graph_target: None,
            generator: String::new(),
            seed: 0,
        })
    }

    /// Builds the symmetric edge list from undirected pairs.
    pub fn undirected(n: usize, pairs: &[(usize, usize)], features: Tensor) -> Result<Self> {
        let edges = pairs.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        Self::new(n, edges, features)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn node_targets(&self) -> Option<&Tensor> {
        self.node_targets.as_ref()
    }

    pub fn graph_target(&self) -> Option<&[f64]> {
        self.graph_target.as_deref()
    }

    pub fn set_node_targets(&mut self, t: Tensor) -> Result<()> {
        if t.rows() != self.n {
            return Err(AmpError::shape(
                "set_node_targets",
                format!("{} rows for {} nodes", t.rows(), self.n),
            ));
        }
        self.node_targets = Some(t);
        self.graph_target = None;
        Ok(())
    }

    pub fn set_graph_target(&mut self, t: Vec<f64>) {
        self.graph_target = Some(t);
        self.node_targets = None;
    }

    /// Targets flattened in row-major order, whichever level is set.
    pub fn target_values(&self) -> Option<Vec<f64>> {
        match (&self.node_targets, &self.graph_target) {
            (Some(t), _) => Some(t.data().to_vec()),
            (None, Some(g)) => Some(g.clone()),
            _ => None,
        }
    }

    /// Incoming-edge count per node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(_, v) in &self.edges {
            deg[v] += 1;
        }
        deg
    }

    /// `adj[v]` lists the sources of edges ending at `v`.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[v].push(u);
        }
        adj
    }

    pub fn is_symmetric(&self) -> bool {
        let set: std::collections::HashSet<_> = self.edges.iter().copied().collect();
        self.edges.iter().all(|&(u, v)| set.contains(&(v, u)))
    }

    pub fn is_connected(&self) -> bool {
        bfs_distances(self, 0).iter().all(Option::is_some)
    }

    /// Dense adjacency with `A[v][u] = 1` for an edge `u → v`.
    pub fn adjacency(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for &(u, v) in &self.edges {
            a[v][u] = 1.0;
        }
        a
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(AmpError::shape("permuted", "permutation length"));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        let permute_rows = |t: &Tensor| {
            let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    out.set(perm[i], j, t.get(i, j));
                }
            }
            out
        };
        let mut g = Graph::new(self.n, edges, permute_rows(&self.features))?;
        g.node_targets = self.node_targets.as_ref().map(permute_rows);
        g.graph_target = self.graph_target.clone();
        g.generator = self.generator.clone();
        g.seed = self.seed;
        Ok(g)
    }
}
