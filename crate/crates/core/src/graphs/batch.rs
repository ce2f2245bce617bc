use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};

/// Disjoint union of graphs processed in one forward pass.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub features: Tensor,
    /// Graph index of every node.
    pub graph_of_node: Vec<usize>,
    pub offsets: Vec<usize>,
    pub num_graphs: usize,
    /// Stacked node targets (`n × t`), if every graph has them.
    pub node_targets: Option<Tensor>,
    /// Graph targets (`B × t`), if every graph has them.
    pub graph_targets: Option<Tensor>,
    /// `1/√((deg_u + 1)(deg_v + 1))` per edge `u → v`.
    pub gcn_coef: Vec<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(AmpError::contract("empty batch"));
        }
        let d = graphs[0].features().cols();
        if graphs.iter().any(|g| g.features().cols() != d) {
            return Err(AmpError::shape("batch", "feature widths differ"));
        }
        let n: usize = graphs.iter().map(|g| g.n()).sum();
        let mut feats = Vec::with_capacity(n * d);
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut graph_of_node = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut node_t = Vec::new();
        let mut graph_t = Vec::new();
        let mut t_cols = None;
        let (mut all_node, mut all_graph) = (true, true);
        let mut off = 0;
        for (gi, g) in graphs.iter().enumerate() {
            offsets.push(off);
            feats.extend_from_slice(g.features().data());
            for &(u, v) in g.edges() {
                src.push(u + off);
                dst.push(v + off);
            }
            graph_of_node.extend(std::iter::repeat_n(gi, g.n()));
            match g.node_targets() {
                Some(t) => {
                    t_cols = Some(t.cols());
                    node_t.extend_from_slice(t.data());
                }
                None => all_node = false,
            }
            match g.graph_target() {
                Some(t) => {
                    t_cols = Some(t.len());
                    graph_t.extend_from_slice(t);
                }
                None => all_graph = false,
            }
            off += g.n();
        }
        let node_targets = match (all_node, t_cols) {
            (true, Some(c)) => Some(Tensor::matrix(n, c, node_t)?),
            _ => None,
        };
        let graph_targets = match (all_graph, t_cols) {
            (true, Some(c)) => Some(Tensor::matrix(graphs.len(), c, graph_t)?),
            _ => None,
        };
        let mut deg = vec![0usize; n];
        for &v in &dst {
            deg[v] += 1;
        }
        let gcn_coef = src
            .iter()
            .zip(&dst)
            .map(|(&u, &v)| 1.0 / (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt())
            .collect();
        Ok(Self {
            n,
            src,
            dst,
            features: Tensor::matrix(n, d, feats)?,
            graph_of_node,
            offsets,
            num_graphs: graphs.len(),
            node_targets,
            graph_targets,
            gcn_coef,
        })
    }

    pub fn single(g: &Graph) -> Result<Self> {
        Self::new(&[g])
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Incoming-edge count per node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &v in &self.dst {
            deg[v] += 1;
        }
        deg
    }
}
