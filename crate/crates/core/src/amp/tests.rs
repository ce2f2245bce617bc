use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::param_grad_check;
use crate::graphs::{generate_graph, GeneratorKind, Graph, TaskKind};

fn graph(seed: u64, n: usize, kind: TaskKind) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_graph(GeneratorKind::ErdosRenyi, n, TaskSpec::new(kind), &mut rng).unwrap()
}

fn model(kind: MpKind, filter: FilterMode, task: TaskKind, depth: LayerVariational) -> AdaptiveModel {
    let cfg = ModelConfig::new(kind, 3, filter, TaskSpec::new(task), 7);
    AdaptiveModel::new(cfg, depth, LayerPrior::Uninformative).unwrap()
}

fn delta(layer: usize) -> LayerVariational {
    LayerVariational::folded_normal(layer as f64 - 0.5, 1e-3, 0.99).unwrap()
}

#[test]
fn single_layer_model_reads_out_the_encoding() {
    let m = model(MpKind::Gcn, FilterMode::None, TaskKind::Eccentricity, delta(1));
    assert_eq!(m.active_layers(), 1);
    let g = graph(1, 6, TaskKind::Eccentricity);
    let b = GraphBatch::single(&g).unwrap();
    let (preds, embs) = m.forward_values(&b).unwrap();
    assert_eq!(preds.len(), 1);
    assert_eq!(embs[0].shape(), &[6, 3]);
}

/// Plain nested-loop GCN stack: encoder, then tanh(h W_s + b + Σ c h_u W_n).
fn reference_gcn(m: &AdaptiveModel, g: &Graph) -> Vec<Vec<Vec<f64>>> {
    let n = g.n();
    let d = m.config.dim;
    let lin = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
        (0..w.cols())
            .map(|j| b.data()[j] + (0..x.len()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
            .collect()
    };
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let hid: Vec<f64> = lin(g.features().row(v), &m.encoder.hidden.w.value, &m.encoder.hidden.b.value)
                .into_iter()
                .map(f64::tanh)
                .collect();
            lin(&hid, &m.encoder.out.w.value, &m.encoder.out.b.value)
                .into_iter()
                .map(f64::tanh)
                .collect()
        })
        .collect();
    let deg = g.in_degrees();
    let mut all = vec![h.clone()];
    for block in &m.blocks[1..m.active_layers()] {
        let Some(MpLayer::Gcn { self_map, w_nbr }) = &block.mp else { panic!() };
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut acc = lin(&h[v], &self_map.w.value, &self_map.b.value);
            for &(u, t) in g.edges() {
                if t != v {
                    continue;
                }
                let c = 1.0 / (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt();
                for j in 0..d {
                    acc[j] += c * (0..d).map(|i| h[u][i] * w_nbr.value.get(i, j)).sum::<f64>();
                }
            }
            next.push(acc.into_iter().map(f64::tanh).collect());
        }
        h = next;
        all.push(h.clone());
    }
    all
}

#[test]
fn unfiltered_stack_matches_reference_implementation() {
    let m = model(MpKind::Gcn, FilterMode::None, TaskKind::Eccentricity, delta(4));
    let g = graph(3, 7, TaskKind::Eccentricity);
    let (_, embs) = m.forward_values(&GraphBatch::single(&g).unwrap()).unwrap();
    let reference = reference_gcn(&m, &g);
    assert_eq!(embs.len(), reference.len());
    for (e, r) in embs.iter().zip(&reference) {
        for v in 0..g.n() {
            for j in 0..3 {
                assert!((e.get(v, j) - r[v][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn prediction_is_the_weighted_mixture() {
    let depth = LayerVariational::folded_normal(3.0, 1.5, 0.99).unwrap();
    let m = model(MpKind::Gin, FilterMode::Embedding, TaskKind::Diameter, depth);
    let gs = [graph(1, 6, TaskKind::Diameter), graph(2, 5, TaskKind::Diameter)];
    let b = GraphBatch::new(&[&gs[0], &gs[1]]).unwrap();
    let (pred, w) = m.predict(&b).unwrap();
    let (layers, _) = m.forward_values(&b).unwrap();
    for i in 0..pred.numel() {
        let mix: f64 = w.iter().zip(&layers).map(|(w, p)| w * p.data()[i]).sum();
        assert!((pred.data()[i] - mix).abs() < 1e-12);
    }
}

#[test]
fn near_delta_prediction_picks_that_layer() {
    let m = model(MpKind::Adgn, FilterMode::Input, TaskKind::Sssp, delta(3));
    let g = graph(4, 6, TaskKind::Sssp);
    let b = GraphBatch::single(&g).unwrap();
    let (pred, w) = m.predict(&b).unwrap();
    assert_eq!(w.len(), 3);
    let (layers, _) = m.forward_values(&b).unwrap();
    for (a, c) in pred.data().iter().zip(layers[2].data()) {
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn zero_model_has_zero_data_and_weight_terms() {
    let mut m = model(MpKind::Gcn, FilterMode::Embedding, TaskKind::Eccentricity, LayerVariational::fixed(2).unwrap());
    for p in m.active_parameters_mut() {
        p.value.fill(0.0);
    }
    let mut g = graph(5, 4, TaskKind::Eccentricity);
    g.set_node_targets(Tensor::zeros(&[4, 1])).unwrap();
    let tape = Tape::new();
    let e = m.elbo(&tape, &GraphBatch::single(&g).unwrap(), 1.0).unwrap().breakdown();
    assert_eq!(e.data, 0.0);
    assert_eq!(e.weight_prior, 0.0);
    assert_eq!(e.entropy, 0.0);
    assert!((e.total - (e.data + e.entropy + e.depth_prior + e.weight_prior)).abs() < 1e-12);
}

#[test]
fn duplicating_the_batch_doubles_the_data_term() {
    let m = model(MpKind::Gcn, FilterMode::Input, TaskKind::Sssp, LayerVariational::poisson(2.0, 0.99).unwrap());
    let g1 = graph(8, 5, TaskKind::Sssp);
    let g2 = graph(9, 6, TaskKind::Sssp);
    let tape = Tape::new();
    let single = m.elbo(&tape, &GraphBatch::new(&[&g1, &g2]).unwrap(), 1.0).unwrap();
    let double = m
        .elbo(&tape, &GraphBatch::new(&[&g1, &g2, &g1, &g2]).unwrap(), 1.0)
        .unwrap();
    assert!((double.data.item() - 2.0 * single.data.item()).abs() < 1e-12 * single.data.item().abs().max(1.0));
    assert_eq!(double.weight_prior.item(), single.weight_prior.item());
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let mut f = Tensor::zeros(&[3, 2]);
    f.set(0, 0, 0.4);
    f.set(1, 0, -1.1);
    f.set(2, 0, 0.7);
    f.set(0, 1, 1.0);
    let mut g = Graph::undirected(3, &[(0, 1), (1, 2)], f).unwrap();
    crate::graphs::compute_targets(&mut g, TaskSpec::new(TaskKind::Sssp)).unwrap();
    let b = GraphBatch::single(&g).unwrap();
    for (kind, filter) in [
        (MpKind::Gcn, FilterMode::Embedding),
        (MpKind::Gin, FilterMode::Input),
        (MpKind::Adgn, FilterMode::Embedding),
    ] {
        let cfg = ModelConfig::new(kind, 2, filter, TaskSpec::new(TaskKind::Sssp), 3);
        for depth in [
            LayerVariational::folded_normal(2.0, 1.0, 0.99).unwrap(),
            LayerVariational::poisson(1.5, 0.99).unwrap(),
            LayerVariational::mixture(&[(1.0, 0.8, 0.3), (3.0, 1.2, 0.7)], 0.99).unwrap(),
        ] {
            let m = AdaptiveModel::new(cfg.clone(), depth, LayerPrior::FoldedNormal { mu: 5.0, sigma: 10.0 }).unwrap();
            let r = param_grad_check(
                &m,
                |m| m.active_parameters_mut(),
                |tape, m| Ok(m.elbo(tape, &b, 1.0)?.total),
                1e-4,
            );
            assert!(r.passed, "{kind:?}: {r:?}");
        }
    }
}

#[test]
fn depth_parameters_receive_gradient() {
    let depth = LayerVariational::folded_normal(1.5, 1.0, 0.99).unwrap();
    let mut m = model(MpKind::Gcn, FilterMode::None, TaskKind::Sssp, depth);
    let g = graph(6, 8, TaskKind::Sssp);
    let tape = Tape::new();
    let e = m.elbo(&tape, &GraphBatch::single(&g).unwrap(), 1.0).unwrap();
    let grads = tape.backward(e.total).unwrap();
    grads.accumulate_into(m.depth.parameters_mut());
    assert!(m.depth.parameters().iter().all(|p| p.grad.item() != 0.0));
}

#[test]
fn growth_appends_and_shrink_retains() {
    let mut m = model(MpKind::Gcn, FilterMode::Embedding, TaskKind::Sssp, delta(3));
    assert_eq!(m.update_depth().unwrap(), DepthUpdate { old_support: 3, new_support: 3, appended: vec![], retained: vec![] });
    let before = m.blocks.clone();

    m.depth.parameters_mut()[0].value = Tensor::scalar(4.5);
    let up = m.update_depth().unwrap();
    assert_eq!(up.appended, vec![4, 5]);
    assert_eq!(m.blocks[..3], before[..]);
    let grown = m.blocks.clone();

    m.depth.parameters_mut()[0].value = Tensor::scalar(2.5);
    let down = m.update_depth().unwrap();
    assert_eq!(down.new_support, 3);
    assert_eq!(down.retained, vec![4, 5]);
    assert_eq!(m.instantiated_layers(), 5);

    // retained layers do not influence the prediction
    let g = graph(2, 6, TaskKind::Sssp);
    let b = GraphBatch::single(&g).unwrap();
    let mut trimmed = m.clone();
    trimmed.blocks.truncate(3);
    assert_eq!(m.predict(&b).unwrap().0, trimmed.predict(&b).unwrap().0);

    m.depth.parameters_mut()[0].value = Tensor::scalar(4.5);
    let again = m.update_depth().unwrap();
    assert!(again.appended.is_empty());
    assert_eq!(m.blocks, grown);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let depth = LayerVariational::mixture(&[(2.0, 1.0, 0.5), (4.0, 1.0, 0.5)], 0.99).unwrap();
    let m = model(MpKind::Adgn, FilterMode::Embedding, TaskKind::Diameter, depth);
    let g = graph(3, 7, TaskKind::Diameter);
    let b = GraphBatch::single(&g).unwrap();
    let ck = Checkpoint::new(m.clone(), 0, serde_json::json!({"note": "test"}));
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back.model, m);
    let (p1, _) = m.predict(&b).unwrap();
    let (p2, _) = back.model.predict(&b).unwrap();
    assert!(p1.data().iter().zip(p2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut bad = ck.clone();
    bad.format = "other".into();
    assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(AmpError::Checkpoint(_))));
}
