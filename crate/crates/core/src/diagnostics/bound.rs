use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Jacobian;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{AmpError, Result};
use crate::graphs::{Graph, GraphBatch};
use crate::mp::aggregate;

/// Absolute slack allowed when comparing against the bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBoundInputs {
    pub c_up: f64,
    pub c_rs: f64,
    pub c_mp: f64,
    pub c_f: f64,
    pub k_h: f64,
    pub k_f: f64,
    /// `adjacency[v][u] = 1` for an edge `u → v`.
    pub adjacency: Vec<Vec<f64>>,
    pub layers: usize,
    pub dim: usize,
}

impl SensitivityBoundInputs {
    pub fn validate(&self) -> Result<()> {
        let consts = [self.c_up, self.c_rs, self.c_mp, self.c_f, self.k_h, self.k_f];
        if consts.iter().any(|c| !(c >= &0.0) || !c.is_finite()) {
            return Err(AmpError::contract("bound constants must be finite and nonnegative"));
        }
        if self.k_f > 1.0 {
            return Err(AmpError::contract(format!("k_F = {} exceeds 1", self.k_f)));
        }
        let n = self.adjacency.len();
        if self.adjacency.iter().any(|r| r.len() != n) {
            return Err(AmpError::contract("adjacency must be square"));
        }
        Ok(())
    }
}

/// `d · M^m` with `M = c_up (c_rs I + c_mp (c_F k_h + k_F) A)`.
pub fn bound_matrix(inputs: &SensitivityBoundInputs) -> Result<Tensor> {
    inputs.validate()?;
    let n = inputs.adjacency.len();
    let a = inputs.c_mp * (inputs.c_f * inputs.k_h + inputs.k_f);
    let mut m = Tensor::zeros(&[n, n]);
    for v in 0..n {
        for u in 0..n {
            let diag = if u == v { inputs.c_rs } else { 0.0 };
            m.set(v, u, inputs.c_up * (diag + a * inputs.adjacency[v][u]));
        }
    }
    let mut power = Tensor::identity(n);
    for _ in 0..inputs.layers {
        power = m.matmul(&power)?;
    }
    Ok(power.map(|x| x * inputs.dim as f64))
}

pub fn sensitivity_bound(inputs: &SensitivityBoundInputs, u: usize, v: usize) -> Result<f64> {
    let n = inputs.adjacency.len();
    if u >= n || v >= n {
        return Err(AmpError::Index {
            op: "sensitivity_bound",
            index: u.max(v),
            len: n,
        });
    }
    Ok(bound_matrix(inputs)?.get(v, u))
}

/// Max absolute row sum: the Lipschitz constant of `h ↦ h W` for the
/// L¹ norm on row vectors.
fn row_norm(w: &Tensor) -> f64 {
    (0..w.rows())
        .map(|r| w.row(r).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Linear message passing with a sigmoid filter,
/// `h' = (h R + Σ_{u→v} F(h_u) ⊙ h_u P) U` with `F(h) = σ(h W_f + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundModel {
    pub up: Tensor,
    pub rs: Tensor,
    pub mp: Tensor,
    pub filter_w: Tensor,
    pub filter_b: Tensor,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub u: usize,
    pub v: usize,
    pub empirical: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub inputs: SensitivityBoundInputs,
    pub rows: Vec<BoundRow>,
    pub violations: usize,
}

impl BoundModel {
    pub fn new(up: Tensor, rs: Tensor, mp: Tensor, filter_w: Tensor, filter_b: Tensor, layers: usize) -> Result<Self> {
        let d = up.rows();
        for (name, t) in [("up", &up), ("rs", &rs), ("mp", &mp), ("filter_w", &filter_w)] {
            if t.shape() != [d, d] {
                return Err(AmpError::shape("bound_model", format!("{name} is {:?}, expected [{d}, {d}]", t.shape())));
            }
        }
        if filter_b.shape() != [1, d] {
            return Err(AmpError::shape("bound_model", format!("filter_b is {:?}", filter_b.shape())));
        }
        Ok(Self {
            up,
            rs,
            mp,
            filter_w,
            filter_b,
            layers,
        })
    }

    pub fn random(d: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |scale: f64, rows: usize| {
            let data = (0..rows * d).map(|_| rng.random_range(-scale..scale)).collect();
            Tensor::matrix(rows, d, data).expect("sized data")
        };
        let up = mat(1.0, d);
        let rs = mat(1.0, d);
        let mp = mat(1.0, d);
        let filter_w = mat(2.0, d);
        let filter_b = mat(2.0, 1);
        Self {
            up,
            rs,
            mp,
            filter_w,
            filter_b,
            layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.up.rows()
    }

    /// Embeddings `h^0 ..= h^m` and the filters applied at each layer.
    fn forward<'t>(&self, tape: &'t Tape, batch: &GraphBatch, h0: Var<'t>) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let [up, rs, mp, fw] = [&self.up, &self.rs, &self.mp, &self.filter_w].map(|t| tape.constant(t.clone()));
        let fb = tape.constant(self.filter_b.clone());
        let mut hs = vec![h0];
        let mut fs = Vec::with_capacity(self.layers);
        for _ in 0..self.layers {
            let h = *hs.last().expect("nonempty");
            let f = h.matmul(fw)?.add_row(fb)?.sigmoid()?;
            let agg = aggregate(tape, batch, f.mul(h)?, None)?;
            let next = h.matmul(rs)?.add(agg.matmul(mp)?)?.matmul(up)?;
            fs.push(f);
            hs.push(next);
        }
        Ok((hs, fs))
    }

    /// Bound constants measured on the trajectory that starts from `h0`.
    pub fn measure(&self, g: &Graph, h0: &Tensor) -> Result<SensitivityBoundInputs> {
        let batch = GraphBatch::single(g)?;
        let tape = Tape::new();
        let (hs, fs) = self.forward(&tape, &batch, tape.constant(h0.clone()))?;
        let k_h = hs[..self.layers].iter().map(|h| h.value().max_abs()).fold(0.0, f64::max);
        let k_f = fs.iter().map(|f| f.value().max_abs()).fold(0.0, f64::max);
        Ok(SensitivityBoundInputs {
            c_up: row_norm(&self.up),
            c_rs: row_norm(&self.rs),
            c_mp: row_norm(&self.mp),
            c_f: 0.25 * self.filter_w.data().iter().map(|x| x.abs()).sum::<f64>(),
            k_h,
            k_f,
            adjacency: g.adjacency(),
            layers: self.layers,
            dim: self.dim(),
        })
    }

    /// Jacobian of `h^m` with respect to `h^0`.
    pub fn jacobian(&self, g: &Graph, h0: &Tensor) -> Result<Jacobian> {
        let batch = GraphBatch::single(g)?;
        let tape = Tape::new();
        let leaf = tape.leaf(h0.clone());
        let (hs, _) = self.forward(&tape, &batch, leaf)?;
        Jacobian::of(*hs.last().expect("nonempty"), leaf)
    }

    /// Empirical `‖∂h_v^m / ∂h_u^0‖₁` against the bound for every pair.
    pub fn verify(&self, g: &Graph, h0: &Tensor) -> Result<BoundTable> {
        if h0.shape() != [g.n(), self.dim()] {
            return Err(AmpError::shape("verify", format!("h0 is {:?}", h0.shape())));
        }
        let inputs = self.measure(g, h0)?;
        let bound = bound_matrix(&inputs)?;
        let jac = self.jacobian(g, h0)?;
        let mut rows = Vec::with_capacity(g.n() * g.n());
        for v in 0..g.n() {
            for u in 0..g.n() {
                rows.push(BoundRow {
                    u,
                    v,
                    empirical: jac.block_l1(v, u),
                    bound: bound.get(v, u),
                });
            }
        }
        let violations = rows.iter().filter(|r| r.empirical > r.bound + BOUND_SLACK).count();
        Ok(BoundTable {
            inputs,
            rows,
            violations,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteReport {
    pub trials: usize,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `empirical / bound` over pairs with a positive bound.
    pub max_ratio: f64,
}

impl BoundSuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Random undirected graph on `n` nodes, each pair joined with probability
/// one half.
fn random_pairs(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.5) {
                pairs.push((u, v));
            }
        }
    }
    pairs
}

/// Randomized check on small models: `n ≤ 6`, `d ≤ 3`, `m ≤ 3`.
pub fn sensitivity_bound_suite(trials: usize, seed: u64) -> Result<BoundSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BoundSuiteReport {
        trials,
        pairs: 0,
        violations: 0,
        max_ratio: 0.0,
    };
    for _ in 0..trials {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let h0 = Tensor::matrix(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect())?;
        let g = Graph::undirected(n, &random_pairs(n, &mut rng), h0.clone())?;
        let model = BoundModel::random(d, m, &mut rng);
        let table = model.verify(&g, &h0)?;
        report.pairs += table.rows.len();
        report.violations += table.violations;
        for r in &table.rows {
            if r.bound > 0.0 {
                report.max_ratio = report.max_ratio.max(r.empirical / r.bound);
            }
        }
    }
    Ok(report)
}

/// Bound table for a random linear model on the topology of `g`, started
/// from Gaussian embeddings.
pub fn random_bound_table(g: &Graph, dim: usize, layers: usize, seed: u64) -> Result<BoundTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.n();
    let h0 = Tensor::matrix(n, dim, (0..n * dim).map(|_| rng.sample(StandardNormal)).collect())?;
    let topo = Graph::new(n, g.edges().to_vec(), h0.clone())?;
    BoundModel::random(dim, layers, &mut rng).verify(&topo, &h0)
}
