use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};
use crate::graphs::{generate_topology, GeneratorKind, Graph};

/// Outcome of driving `x_v` to node `u` with constant per-layer filters
/// under the bare aggregation `h_z^ℓ = Σ_{y→z} F(y, ℓ) h_y^{ℓ−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reachability {
    pub walk: Vec<usize>,
    pub eps: f64,
    /// `filters[ℓ − 1][y]`: gate of node `y` at layer `ℓ`, shared by all
    /// dimensions.
    pub filters: Vec<Vec<f64>>,
    /// `‖h_u^K − x_v‖₁`.
    pub distance: f64,
    /// `d · ε`.
    pub tolerance: f64,
}

impl Reachability {
    pub fn passed(&self) -> bool {
        self.distance <= self.tolerance
    }
}

/// Some walk `v = w_0 → … → w_k = u` along directed edges.
pub fn find_walk(g: &Graph, v: usize, u: usize, k: usize) -> Option<Vec<usize>> {
    let n = g.n();
    if v >= n || u >= n {
        return None;
    }
    let preds = g.in_neighbors();
    // reach[s][z]: some walk of length s runs from v to z
    let mut reach = vec![vec![false; n]; k + 1];
    reach[0][v] = true;
    for s in 1..=k {
        for z in 0..n {
            reach[s][z] = preds[z].iter().any(|&y| reach[s - 1][y]);
        }
    }
    if !reach[k][u] {
        return None;
    }
    let mut walk = vec![u];
    let mut cur = u;
    for s in (1..=k).rev() {
        cur = *preds[cur].iter().find(|&&y| reach[s - 1][y])?;
        walk.push(cur);
    }
    walk.reverse();
    Some(walk)
}

/// Runs the construction along `walk` from the initial features `x`.
///
/// At layer `ℓ` the predecessor `w_{ℓ−1}` gets gate `1 − η_ℓ` and every other
/// node `η_ℓ`, where `η_ℓ` keeps the per-dimension error of that step below
/// `ε / 2^{K−ℓ+1}`.
pub fn construct_along(g: &Graph, x: &Tensor, walk: &[usize], eps: f64) -> Result<Reachability> {
    let n = g.n();
    if x.shape().len() != 2 || x.rows() != n {
        return Err(AmpError::shape("reachability", format!("features {:?} for {n} nodes", x.shape())));
    }
    if walk.len() < 2 {
        return Err(AmpError::contract("walk needs at least one step"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(AmpError::contract(format!("ε = {eps} outside (0, 1)")));
    }
    let preds = g.in_neighbors();
    for w in walk.windows(2) {
        if w[0] >= n || w[1] >= n || !preds[w[1]].contains(&w[0]) {
            return Err(AmpError::contract(format!("no edge {} → {} for the walk", w[0], w[1])));
        }
    }
    let d = x.cols();
    let k = walk.len() - 1;
    let mut h = x.clone();
    let mut filters = Vec::with_capacity(k);
    for layer in 1..=k {
        let budget = eps / 2f64.powi((k - layer + 1) as i32);
        let (target, pred) = (walk[layer], walk[layer - 1]);
        let spread = (0..d)
            .map(|i| preds[target].iter().map(|&z| h.get(z, i).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let eta = if spread > 0.0 { (budget / spread).min(0.5) } else { 0.5 };
        let mut gate = vec![eta; n];
        gate[pred] = 1.0 - eta;
        let mut next = Tensor::zeros(&[n, d]);
        for z in 0..n {
            for &y in &preds[z] {
                for i in 0..d {
                    next.set(z, i, next.get(z, i) + gate[y] * h.get(y, i));
                }
            }
        }
        filters.push(gate);
        h = next;
    }
    let (v, u) = (walk[0], walk[k]);
    let distance = (0..d).map(|i| (h.get(u, i) - x.get(v, i)).abs()).sum();
    Ok(Reachability {
        walk: walk.to_vec(),
        eps,
        filters,
        distance,
        tolerance: d as f64 * eps,
    })
}

/// Construction on the node features of `g` along some walk of length `k`.
pub fn reachability_construct(g: &Graph, v: usize, u: usize, k: usize, eps: f64) -> Result<Reachability> {
    let walk = find_walk(g, v, u, k)
        .ok_or_else(|| AmpError::contract(format!("no walk of length {k} from {v} to {u}")))?;
    construct_along(g, g.features(), &walk, eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachSuiteReport {
    pub cases: usize,
    pub failures: usize,
    /// Largest `distance / (d ε)`.
    pub max_ratio: f64,
}

impl ReachSuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random connected graphs with random walks of every length up to
/// `max_k`, for each `ε` in `eps`.
pub fn reachability_suite(graphs: usize, max_k: usize, eps: &[f64], seed: u64) -> Result<ReachSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ReachSuiteReport {
        cases: 0,
        failures: 0,
        max_ratio: 0.0,
    };
    let kinds = [GeneratorKind::ErdosRenyi, GeneratorKind::BarabasiAlbert, GeneratorKind::Caterpillar, GeneratorKind::Cycle];
    for _ in 0..graphs {
        let n = rng.random_range(4..=10);
        let d = rng.random_range(1..=3);
        let kind = *kinds.choose(&mut rng).expect("nonempty");
        let g = loop {
            let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect())?;
            let g = Graph::undirected(n, &generate_topology(kind, n, &mut rng), x)?;
            if g.is_connected() {
                break g;
            }
        };
        let succ = {
            let mut s = vec![Vec::new(); n];
            for &(a, b) in g.edges() {
                s[a].push(b);
            }
            s
        };
        for k in 1..=max_k {
            let mut walk = vec![rng.random_range(0..n)];
            for _ in 0..k {
                let last = *walk.last().expect("nonempty");
                walk.push(*succ[last].choose(&mut rng).expect("connected graph"));
            }
            for &e in eps {
                let r = construct_along(&g, g.features(), &walk, e)?;
                report.cases += 1;
                report.failures += usize::from(!r.passed());
                report.max_ratio = report.max_ratio.max(r.distance / r.tolerance);
            }
        }
    }
    Ok(report)
}
