//! Shared fixtures for the benchmarks.

use amp_core::amp::{AdaptiveModel, ModelConfig};
use amp_core::distributions::{LayerPrior, LayerVariational};
use amp_core::graphs::{build_dataset, DatasetSpec, Graph, Preset, TaskKind, TaskSpec};
use amp_core::mp::{FilterMode, MpKind};

/// `count` training graphs of the desk preset.
pub fn graphs(task: TaskKind, count: usize) -> Vec<Graph> {
    let mut spec = DatasetSpec::preset(TaskSpec::new(task), Preset::Desk, 3);
    spec.sizes = [count, 1, 1];
    build_dataset(&spec).expect("dataset builds").train
}

pub fn model(kind: MpKind, task: TaskKind, layers: usize) -> AdaptiveModel {
    let cfg = ModelConfig::new(kind, 10, FilterMode::Embedding, TaskSpec::new(task), 5);
    AdaptiveModel::new(cfg, LayerVariational::fixed(layers).expect("positive depth"), LayerPrior::Uninformative)
        .expect("model builds")
}
