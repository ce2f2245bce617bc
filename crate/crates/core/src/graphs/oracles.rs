use std::collections::VecDeque;

use super::{Graph, TaskKind, TaskSpec};
use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};

/// Hop distances from `source` along edge direction; `None` if unreachable.
pub fn bfs_distances(g: &Graph, source: usize) -> Vec<Option<usize>> {
    let mut out_adj = vec![Vec::new(); g.n()];
    for &(u, v) in g.edges() {
        out_adj[u].push(v);
    }
    let mut dist = vec![None; g.n()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &out_adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn finite_distances(g: &Graph, source: usize) -> Result<Vec<usize>> {
    bfs_distances(g, source)
        .into_iter()
        .enumerate()
        .map(|(v, d)| d.ok_or(AmpError::Disconnected { from: source, node: v }))
        .collect()
}

pub fn sssp(g: &Graph, source: usize) -> Result<Vec<usize>> {
    finite_distances(g, source)
}

pub fn eccentricities(g: &Graph) -> Result<Vec<usize>> {
    (0..g.n())
        .map(|v| Ok(finite_distances(g, v)?.into_iter().max().unwrap_or(0)))
        .collect()
}

pub fn diameter(g: &Graph) -> Result<usize> {
    Ok(eccentricities(g)?.into_iter().max().unwrap_or(0))
}

fn column(values: Vec<usize>) -> Result<Tensor> {
    let n = values.len();
    Tensor::matrix(n, 1, values.into_iter().map(|v| v as f64).collect())
}

/// Sets the task target on `g`. For SSSP the source is the node whose
/// second feature equals 1.
pub fn compute_targets(g: &mut Graph, task: TaskSpec) -> Result<()> {
    match task.kind {
        TaskKind::Diameter => {
            let d = diameter(g)?;
            g.set_graph_target(vec![d as f64]);
        }
        TaskKind::Eccentricity => {
            let e = eccentricities(g)?;
            g.set_node_targets(column(e)?)?;
        }
        TaskKind::Sssp => {
            let f = g.features();
            if f.cols() < 2 {
                return Err(AmpError::contract("SSSP needs a source-flag feature column"));
            }
            let source = (0..g.n())
                .find(|&v| f.get(v, 1) == 1.0)
                .ok_or_else(|| AmpError::contract("SSSP graph has no flagged source"))?;
            let d = sssp(g, source)?;
            g.set_node_targets(column(d)?)?;
        }
    }
    Ok(())
}
