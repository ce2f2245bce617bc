use amp_bench::{graphs, model};
use amp_core::autodiff::Tape;
use amp_core::diagnostics::{dirichlet_energy, sensitivity};
use amp_core::distributions::LayerVariational;
use amp_core::graphs::{GraphBatch, TaskKind};
use amp_core::mp::MpKind;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn elbo_backward(c: &mut Criterion) {
    let gs = graphs(TaskKind::Diameter, 32);
    let refs: Vec<_> = gs.iter().collect();
    let batch = GraphBatch::new(&refs).unwrap();
    let mut group = c.benchmark_group("elbo_backward_batch32");
    group.sample_size(10);
    for kind in [MpKind::Gcn, MpKind::Gin, MpKind::Adgn] {
        for layers in [2, 8] {
            let m = model(kind, TaskKind::Diameter, layers);
            group.bench_with_input(BenchmarkId::new(kind.name(), layers), &m, |b, m| {
                b.iter(|| {
                    let tape = Tape::new();
                    let e = m.elbo(&tape, &batch, 1.0).unwrap();
                    tape.backward(e.total).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let gs = graphs(TaskKind::Sssp, 1);
    let batch = GraphBatch::single(&gs[0]).unwrap();
    let m = model(MpKind::Gcn, TaskKind::Sssp, 8);
    c.bench_function("predict_single_graph_8_layers", |b| b.iter(|| m.predict(&batch).unwrap()));
}

fn truncation(c: &mut Criterion) {
    c.bench_function("truncate_folded_normal", |b| {
        b.iter(|| LayerVariational::folded_normal(12.3, 7.1, 0.99).unwrap().support())
    });
    c.bench_function("truncate_mixture", |b| {
        b.iter(|| {
            LayerVariational::mixture(&[(5.0, 3.0, 0.5), (15.0, 3.0, 0.5)], 0.99)
                .unwrap()
                .support()
        })
    });
    c.bench_function("truncate_poisson", |b| b.iter(|| LayerVariational::poisson(10.0, 0.99).unwrap().support()));
}

fn diagnostics(c: &mut Criterion) {
    let gs = graphs(TaskKind::Eccentricity, 1);
    let g = &gs[0];
    c.bench_function("dirichlet_energy", |b| b.iter(|| dirichlet_energy(g, g.features()).unwrap()));
    let m = model(MpKind::Gcn, TaskKind::Eccentricity, 4);
    let mut group = c.benchmark_group("sensitivity");
    group.sample_size(10);
    group.bench_function("layers_1_to_4", |b| b.iter(|| sensitivity(&m, g, 0, 1, 4).unwrap()));
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("dataset");
    group.sample_size(10);
    group.bench_function("generate_64_diameter_graphs", |b| b.iter(|| graphs(TaskKind::Diameter, 64)));
    group.finish();
}

criterion_group!(benches, elbo_backward, predict, truncation, diagnostics, generation);
criterion_main!(benches);
