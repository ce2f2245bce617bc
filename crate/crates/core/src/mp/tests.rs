use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{param_grad_check, Tape, Tensor};
use crate::graphs::{generate_graph, GeneratorKind, Graph, GraphBatch, TargetLevel, TaskKind, TaskSpec};

const KINDS: [MpKind; 3] = [MpKind::Gcn, MpKind::Gin, MpKind::Adgn];

fn random_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_graph(seed: u64, n: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_graph(
        GeneratorKind::ErdosRenyi,
        n,
        TaskSpec::new(TaskKind::Eccentricity),
        &mut rng,
    )
    .unwrap()
}

#[test]
fn hand_computed_gcn_on_single_edge() {
    let (a, b, bias) = (0.7, -1.3, 0.2);
    let layer = MpLayer::Gcn {
        self_map: Linear::from_values(
            "s",
            Tensor::matrix(1, 1, vec![a]).unwrap(),
            Tensor::vector(vec![bias]).unwrap(),
        ),
        w_nbr: crate::autodiff::Parameter::new("n", Tensor::matrix(1, 1, vec![b]).unwrap()),
    };
    let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(&[2, 1])).unwrap();
    let batch = GraphBatch::single(&g).unwrap();
    let tape = Tape::new();
    let h = tape.constant(Tensor::matrix(2, 1, vec![0.5, -2.0]).unwrap());
    let out = layer.forward(&tape, &batch, h, None).unwrap().value();
    // both endpoints have degree 1, so the edge weight is 1/2
    let expect0 = (a * 0.5 + bias + 0.5 * b * -2.0f64).tanh();
    let expect1 = (a * -2.0 + bias + 0.5 * b * 0.5f64).tanh();
    assert!((out.get(0, 0) - expect0).abs() < 1e-15);
    assert!((out.get(1, 0) - expect1).abs() < 1e-15);
}

#[test]
fn zero_filter_gin_reduces_to_self_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = MpLayer::new(MpKind::Gin, "gin", 3, &mut rng);
    let g = random_graph(2, 8);
    let batch = GraphBatch::single(&g).unwrap();
    let tape = Tape::new();
    let h = tape.constant(random_matrix(8, 3, &mut rng));
    let zeros = tape.constant(Tensor::zeros(&[8, 3]));
    let out = layer.forward(&tape, &batch, h, Some(zeros)).unwrap().value();
    let MpLayer::Gin { mlp, .. } = &layer else { unreachable!() };
    let direct = mlp.forward(&tape, h).unwrap().tanh().unwrap().value();
    assert_eq!(out, direct);
}

#[test]
fn adgn_matrix_is_antisymmetric_minus_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in 1..6 {
        let layer = MpLayer::new(MpKind::Adgn, "a", d, &mut rng);
        let m = layer.adgn_matrix().unwrap();
        let sum = m.zip_map(&m.transpose(), |a, b| a + b);
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { -2.0 * ADGN_GAMMA } else { 0.0 };
                assert!((sum.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn saturated_filters() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tape = Tape::new();
    let x = tape.constant(random_matrix(5, 2, &mut rng));
    let h = tape.constant(random_matrix(5, 4, &mut rng));
    let mut f = Filter::new(FilterMode::Embedding, "f", 2, 4, &mut rng).unwrap();
    f.saturate(20.0);
    assert!(f.eval(&tape, x, h).unwrap().value().data().iter().all(|&v| v > 1.0 - 1e-8));
    f.saturate(-20.0);
    let closed = f.eval(&tape, x, h).unwrap();
    assert!(closed.value().data().iter().all(|&v| v < 1e-8));

    // closed gates silence neighbors: GIN output ≈ self term
    let g = random_graph(3, 5);
    let batch = GraphBatch::single(&g).unwrap();
    let layer = MpLayer::new(MpKind::Gin, "g", 4, &mut rng);
    let filtered = layer.forward(&tape, &batch, h, Some(closed)).unwrap().value();
    let zeros = tape.constant(Tensor::zeros(&[5, 4]));
    let silent = layer.forward(&tape, &batch, h, Some(zeros)).unwrap().value();
    for (a, b) in filtered.data().iter().zip(silent.data()) {
        assert!((a - b).abs() < 1e-6);
    }

    assert!(Filter::new(FilterMode::None, "f", 2, 4, &mut rng).is_none());
    assert!(ones_filter(&tape, 3, 2).value().data().iter().all(|&v| v == 1.0));
}

#[test]
fn graph_readout_mean_pools() {
    let g = Graph::undirected(2, &[(0, 1)], Tensor::zeros(&[2, 1])).unwrap();
    let batch = GraphBatch::single(&g).unwrap();
    let tape = Tape::new();
    let h = tape.constant(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
    assert_eq!(mean_pool(h, &batch).unwrap().value().data(), &[2.0]);
}

#[test]
fn readout_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g1 = random_graph(1, 6);
    let g2 = random_graph(2, 4);
    let batch = GraphBatch::new(&[&g1, &g2]).unwrap();
    let tape = Tape::new();
    let h = tape.constant(random_matrix(10, 3, &mut rng));
    let node = Readout::new(TargetLevel::Node, "r", 3, 1, &mut rng);
    assert_eq!(node.forward(&tape, &batch, h).unwrap().shape(), vec![10, 1]);
    let graph = Readout::new(TargetLevel::Graph, "r", 3, 1, &mut rng);
    assert_eq!(graph.forward(&tape, &batch, h).unwrap().shape(), vec![2, 1]);
}

#[test]
fn edgeless_graph_aggregates_to_zero() {
    let g = Graph::new(2, vec![], Tensor::zeros(&[2, 1])).unwrap();
    let batch = GraphBatch::single(&g).unwrap();
    let tape = Tape::new();
    let h = tape.constant(Tensor::ones(&[2, 1]));
    assert_eq!(aggregate(&tape, &batch, h, None).unwrap().value().data(), &[0.0, 0.0]);
}

#[derive(Clone)]
struct LayerAndFilter {
    layer: MpLayer,
    filter: Filter,
}

#[test]
fn gradients_flow_through_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_graph(5, 6);
    let batch = GraphBatch::single(&g).unwrap();
    let h0 = random_matrix(6, 2, &mut rng);
    for kind in KINDS {
        let model = LayerAndFilter {
            layer: MpLayer::new(kind, "l", 2, &mut rng),
            filter: Filter::new(FilterMode::Embedding, "f", 1, 2, &mut rng).unwrap(),
        };
        let report = param_grad_check(
            &model,
            |m| {
                let mut p = m.filter.parameters_mut();
                p.extend(m.layer.parameters_mut());
                p
            },
            |tape, m| {
                let h = tape.constant(h0.clone());
                let f = m.filter.eval(tape, h, h)?;
                m.layer.forward(tape, &batch, h, Some(f))?.square()?.sum()
            },
            1e-5,
        );
        assert!(report.passed, "{kind:?}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn ones_filter_is_neutral(seed in 0u64..100_000, n in 3usize..10, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(seed, n);
        let batch = GraphBatch::single(&g).unwrap();
        for kind in KINDS {
            let layer = MpLayer::new(kind, "l", d, &mut rng);
            let tape = Tape::new();
            let h = tape.constant(random_matrix(n, d, &mut rng));
            let plain = layer.forward(&tape, &batch, h, None).unwrap().value();
            let ones = ones_filter(&tape, n, d);
            let filtered = layer.forward(&tape, &batch, h, Some(ones)).unwrap().value();
            for (a, b) in plain.data().iter().zip(filtered.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn layers_are_permutation_equivariant(seed in 0u64..100_000, n in 3usize..10, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(seed, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pg = g.permuted(&perm).unwrap();
        let (b, pb) = (GraphBatch::single(&g).unwrap(), GraphBatch::single(&pg).unwrap());
        let h = random_matrix(n, d, &mut rng);
        let f = random_matrix(n, d, &mut rng).map(|v| 0.5 + 0.4 * v);
        let permute = |t: &Tensor| {
            let mut out = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for j in 0..d {
                    out.set(perm[i], j, t.get(i, j));
                }
            }
            out
        };
        for kind in KINDS {
            let layer = MpLayer::new(kind, "l", d, &mut rng);
            let tape = Tape::new();
            let out = layer
                .forward(&tape, &b, tape.constant(h.clone()), Some(tape.constant(f.clone())))
                .unwrap()
                .value();
            let pout = layer
                .forward(&tape, &pb, tape.constant(permute(&h)), Some(tape.constant(permute(&f))))
                .unwrap()
                .value();
            let expect = permute(&out);
            for (a, b) in expect.data().iter().zip(pout.data()) {
                prop_assert!((a - b).abs() <= 1e-12, "{:?}", kind);
            }
        }
    }
}
