use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::amp::ModelConfig;
use crate::distributions::{LayerPrior, LayerVariational};
use crate::graphs::{generate_graph, GeneratorKind, TaskKind, TaskSpec};
use crate::mp::{FilterMode, MpKind};

fn naive_energy(g: &Graph, h: &Tensor) -> f64 {
    let a = g.adjacency();
    let mut total = 0.0;
    for u in 0..g.n() {
        for v in 0..g.n() {
            if a[v][u] == 0.0 {
                continue;
            }
            for j in 0..h.cols() {
                total += (h.get(u, j) - h.get(v, j)).powi(2);
            }
        }
    }
    total / g.n() as f64
}

fn path(n: usize, d: usize) -> Graph {
    let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::undirected(n, &pairs, Tensor::zeros(&[n, d])).unwrap()
}

#[test]
fn energy_examples() {
    let g = path(2, 1);
    assert_eq!(dirichlet_energy(&g, &Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap()).unwrap(), 1.0);
    let g = path(5, 3);
    assert_eq!(dirichlet_energy(&g, &Tensor::full(&[5, 3], 0.7)).unwrap(), 0.0);
    assert!(dirichlet_energy(&g, &Tensor::zeros(&[4, 3])).is_err());
}

fn model(kind: MpKind, filter: FilterMode, d: usize, layers: usize) -> AdaptiveModel {
    let cfg = ModelConfig::new(kind, d, filter, TaskSpec::new(TaskKind::Sssp), 11);
    let depth = LayerVariational::fixed(layers).unwrap();
    AdaptiveModel::new(cfg, depth, LayerPrior::Uninformative).unwrap()
}

fn sssp_graph(seed: u64, n: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_graph(GeneratorKind::ErdosRenyi, n, TaskSpec::new(TaskKind::Sssp), &mut rng).unwrap()
}

#[test]
fn equal_layers_give_identity_jacobian() {
    let m = model(MpKind::Gcn, FilterMode::Embedding, 3, 3);
    let g = sssp_graph(1, 5);
    for u in 0..5 {
        assert!((sensitivity(&m, &g, u, 2, 2).unwrap() - 3.0).abs() < 1e-15);
    }
    assert!(sensitivity(&m, &g, 0, 3, 2).is_err());
    assert!(sensitivity(&m, &g, 0, 0, 2).is_err());
    assert!(sensitivity(&m, &g, 0, 1, 4).is_err());
}

#[test]
fn closed_filters_annihilate_cross_node_sensitivity() {
    let mut m = model(MpKind::Gcn, FilterMode::Embedding, 2, 4);
    for b in &mut m.blocks {
        if let Some(f) = &mut b.filter {
            f.saturate(-40.0);
        }
    }
    let g = path(4, 2);
    let jac = layer_jacobian(&m, &g, 1, 4).unwrap();
    for v in 0..4 {
        for u in 0..4 {
            if u != v {
                assert!(jac.block_l1(v, u) < 1e-12, "{v} {u}");
            }
        }
    }
    assert!(jac.block_l1(2, 2) > 0.0);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut f = Tensor::zeros(&[3, 2]);
    f.set(0, 1, 1.0);
    f.set(1, 0, 0.3);
    f.set(2, 0, -0.8);
    let g = Graph::undirected(3, &[(0, 1), (1, 2)], f).unwrap();
    let batch = GraphBatch::single(&g).unwrap();
    for kind in [MpKind::Gcn, MpKind::Gin, MpKind::Adgn] {
        let m = model(kind, FilterMode::Embedding, 2, 3);
        let jac = layer_jacobian(&m, &g, 1, 3).unwrap();
        let h1 = m.forward_values(&batch).unwrap().1[0].clone();
        let run = |h: &Tensor| {
            let tape = Tape::new();
            let x = tape.constant(batch.features.clone());
            let (hs, _) = m.propagate(&tape, &batch, x, tape.constant(h.clone()), 1, 3).unwrap();
            hs[1].value()
        };
        let step = 1e-6;
        for u in 0..3 {
            for i in 0..2 {
                let mut up = h1.clone();
                let mut down = h1.clone();
                up.set(u, i, h1.get(u, i) + step);
                down.set(u, i, h1.get(u, i) - step);
                let (hp, hm) = (run(&up), run(&down));
                for v in 0..3 {
                    for j in 0..2 {
                        let fd = (hp.get(v, j) - hm.get(v, j)) / (2.0 * step);
                        assert!((fd - jac.get(v, u, j, i)).abs() < 1e-4, "{kind:?}");
                    }
                }
            }
        }
    }
}

fn half_open_model() -> (AdaptiveModel, Graph) {
    let mut m = model(MpKind::Gcn, FilterMode::Embedding, 2, 2);
    let f = m.blocks[0].filter.as_mut().unwrap();
    f.mlp.out.w.value.fill(0.0);
    f.mlp.out.b.value = Tensor::matrix(1, 2, vec![40.0, -40.0]).unwrap();
    (m, path(2, 2))
}

#[test]
fn filter_fraction_examples() {
    let (m, g) = half_open_model();
    let g = Graph::new(2, g.edges().to_vec(), Tensor::zeros(&[2, 2])).unwrap();
    assert_eq!(filter_stats(&m, std::slice::from_ref(&g)).unwrap().fractions, vec![0.5]);

    let mut open = model(MpKind::Gin, FilterMode::Input, 3, 4);
    let mut closed = open.clone();
    for b in &mut open.blocks {
        if let Some(f) = &mut b.filter {
            f.saturate(40.0);
        }
    }
    for b in &mut closed.blocks {
        if let Some(f) = &mut b.filter {
            f.saturate(-40.0);
        }
    }
    let gs = [sssp_graph(2, 6), sssp_graph(3, 7)];
    let o = filter_stats(&open, &gs).unwrap();
    let c = filter_stats(&closed, &gs).unwrap();
    assert_eq!(o.fractions.len(), 3);
    assert!(o.fractions.iter().all(|f| (f - 1.0).abs() < 1e-12));
    assert!(c.fractions.iter().all(|f| f.abs() < 1e-12));

    let none = filter_stats(&model(MpKind::Gcn, FilterMode::None, 3, 4), &gs).unwrap();
    assert!(none.no_filter);
    assert_eq!(none.fractions, vec![1.0; 3]);
}

#[test]
fn report_covers_every_active_layer() {
    let m = model(MpKind::Adgn, FilterMode::Embedding, 3, 4);
    let gs: Vec<Graph> = (0..3).map(|s| sssp_graph(s, 6)).collect();
    let r = diagnose(&m, &gs, &DiagnoseOptions::default()).unwrap();
    assert_eq!(r.layers.len(), 4);
    assert!(r.layers[0].filter_fraction.is_none());
    assert!((r.layers[3].sensitivity - 3.0 * 1.0).abs() < 1e-12);
    for l in &r.layers {
        assert!(l.dirichlet_energy >= 0.0 && l.sensitivity >= 0.0);
        if let Some(f) = l.filter_fraction {
            assert!((0.0..=1.0).contains(&f));
        }
    }
}

fn ident(d: usize) -> Tensor {
    Tensor::identity(d)
}

#[test]
fn zero_filter_bound_is_diagonal() {
    let inputs = SensitivityBoundInputs {
        c_up: 0.7,
        c_rs: 1.3,
        c_mp: 5.0,
        c_f: 0.0,
        k_h: 2.0,
        k_f: 0.0,
        adjacency: path(4, 1).adjacency(),
        layers: 3,
        dim: 2,
    };
    let b = bound_matrix(&inputs).unwrap();
    for v in 0..4 {
        for u in 0..4 {
            let expect = if u == v { 2.0 * (0.7f64 * 1.3).powi(3) } else { 0.0 };
            assert!((b.get(v, u) - expect).abs() < 1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = BoundModel::random(2, 3, &mut rng);
    m.filter_w.fill(0.0);
    m.filter_b.fill(-40.0);
    let h0 = Tensor::matrix(4, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.9, 1.1, -1.4]).unwrap();
    let t = m.verify(&path(4, 2), &h0).unwrap();
    assert_eq!(t.violations, 0);
    for r in t.rows.iter().filter(|r| r.u != r.v) {
        assert!(r.empirical < 1e-12 && r.bound < 1e-12);
    }
}

#[test]
fn one_layer_identity_maps_on_one_edge() {
    let d = 2;
    let fw = Tensor::matrix(2, 2, vec![0.8, -0.4, 1.5, 0.2]).unwrap();
    let fb = Tensor::matrix(1, 2, vec![0.1, -0.3]).unwrap();
    let m = BoundModel::new(ident(d), ident(d), ident(d), fw.clone(), fb.clone(), 1).unwrap();
    let g = Graph::new(2, vec![(0, 1)], Tensor::zeros(&[2, 2])).unwrap();
    let h0 = Tensor::matrix(2, 2, vec![0.6, -1.2, 0.3, 0.4]).unwrap();
    let t = m.verify(&g, &h0).unwrap();
    let i = &t.inputs;
    let expect = d as f64 * i.c_mp * (i.c_f * i.k_h + i.k_f);
    assert!((sensitivity_bound(i, 0, 1).unwrap() - expect).abs() < 1e-12);

    // h_1' = h_1 + σ(h_0 W + b) ⊙ h_0, so ∂h_1'[j]/∂h_0[i] = δ_ij σ_j + h_0[j] σ_j (1 − σ_j) W[i][j]
    let jac = m.jacobian(&g, &h0).unwrap();
    let mut hand = 0.0;
    for j in 0..d {
        let z = fb.data()[j] + (0..d).map(|k| h0.get(0, k) * fw.get(k, j)).sum::<f64>();
        let s = 1.0 / (1.0 + (-z).exp());
        for k in 0..d {
            let entry = if k == j { s } else { 0.0 } + h0.get(0, j) * s * (1.0 - s) * fw.get(k, j);
            assert!((jac.get(1, 0, j, k) - entry).abs() < 1e-12);
            hand += entry.abs();
        }
    }
    let row = t.rows.iter().find(|r| r.u == 0 && r.v == 1).unwrap();
    assert!((row.empirical - hand).abs() < 1e-12);
    assert!(row.empirical <= expect);
    assert_eq!(t.rows.iter().find(|r| r.u == 1 && r.v == 0).unwrap().empirical, 0.0);
}

#[test]
fn randomized_bound_suite_has_no_violations() {
    let r = sensitivity_bound_suite(20, 2024).unwrap();
    assert_eq!(r.violations, 0, "{r:?}");
    assert!(r.pairs > 0);
}

#[test]
fn bound_inputs_are_validated() {
    let mut inputs = SensitivityBoundInputs {
        c_up: 1.0,
        c_rs: 1.0,
        c_mp: 1.0,
        c_f: 0.0,
        k_h: 1.0,
        k_f: 1.5,
        adjacency: vec![vec![0.0]],
        layers: 1,
        dim: 1,
    };
    assert!(bound_matrix(&inputs).is_err());
    inputs.k_f = 0.5;
    inputs.c_rs = -1.0;
    assert!(bound_matrix(&inputs).is_err());
}

#[test]
fn reachability_base_case() {
    let mut g = path(2, 3);
    *g.features_mut() = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 4.0, 3.0, -7.0]).unwrap();
    let r = reachability_construct(&g, 0, 1, 1, 1e-3).unwrap();
    assert_eq!(r.walk, vec![0, 1]);
    assert!(r.passed(), "{r:?}");
    assert!(r.distance <= 3.0 * 1e-3);
}

#[test]
fn reachability_closed_walk_returns_home() {
    let mut g = Graph::undirected(4, &[(0, 1), (1, 2), (2, 3), (0, 2)], Tensor::zeros(&[4, 2])).unwrap();
    *g.features_mut() = Tensor::matrix(4, 2, vec![1.5, -0.5, 2.0, 2.0, -3.0, 1.0, 0.7, 0.2]).unwrap();
    for eps in [1e-2, 1e-3] {
        let r = reachability_construct(&g, 2, 2, 2, eps).unwrap();
        assert_eq!((r.walk[0], r.walk[2]), (2, 2));
        assert!(r.passed());
    }
}

#[test]
fn reachability_rejects_impossible_walks() {
    let g = path(3, 1);
    // a path is bipartite: no odd walk joins the two ends
    assert!(reachability_construct(&g, 0, 2, 1, 1e-3).is_err());
    assert!(reachability_construct(&g, 0, 2, 3, 1e-3).is_err());
    assert!(reachability_construct(&g, 0, 2, 4, 1e-3).unwrap().passed());
    assert!(construct_along(&g, g.features(), &[0, 2], 1e-3).is_err());
    assert_eq!(find_walk(&g, 0, 0, 0), Some(vec![0]));
}

#[test]
fn randomized_reachability_suite_passes() {
    let r = reachability_suite(10, 5, &[1e-2, 1e-3], 77).unwrap();
    assert_eq!(r.cases, 100);
    assert!(r.passed(), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn energy_matches_double_loop(seed in any::<u64>(), n in 1usize..12, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = crate::graphs::generate_topology(GeneratorKind::ErdosRenyi, n, &mut rng);
        let h = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let g = Graph::undirected(n, &pairs, Tensor::zeros(&[n, 1])).unwrap();
        let e = dirichlet_energy(&g, &h).unwrap();
        prop_assert!((e - naive_energy(&g, &h)).abs() <= 1e-12 * e.max(1.0));
        prop_assert!(e >= 0.0);
    }

    #[test]
    fn energy_is_relabeling_invariant(seed in any::<u64>(), n in 2usize..10) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = crate::graphs::generate_topology(GeneratorKind::BarabasiAlbert, n, &mut rng);
        let h = Tensor::matrix(n, 2, (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = Graph::undirected(n, &pairs, h.clone()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let p = g.permuted(&perm).unwrap();
        let a = dirichlet_energy(&g, &h).unwrap();
        let b = dirichlet_energy(&p, p.features()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}
