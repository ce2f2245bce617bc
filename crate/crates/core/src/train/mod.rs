//! Optimization: Adam, early stopping, the epoch loop and evaluation.

mod adam;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig, EarlyStopper, StopDecision};

use crate::amp::{AdaptiveModel, ElboBreakdown};
use crate::autodiff::Tape;
use crate::error::{AmpError, Result};
use crate::graphs::{Dataset, Graph, GraphBatch, TargetLevel};

/// Graphs per evaluation forward pass.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// Graphs per optimizer step; `None` means the full training split.
    pub batch_size: Option<usize>,
    /// Seed of the per-epoch shuffling streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 100,
            adam: AdamConfig::default(),
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: ElboBreakdown,
    pub val_mse: f64,
    /// Filled on the last row only, for the returned model.
    pub test_mse: Option<f64>,
    pub l_hat: usize,
    pub depth_params: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    /// Model state at the best validation epoch.
    pub best: AdaptiveModel,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test: Option<Metrics>,
    /// Set when a non-finite value stopped training early.
    pub aborted: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// `log10(mse)`; `-inf` for a perfect fit.
    pub log10_mse: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_sums(sse: f64, count: usize) -> Self {
        let mse = sse / count as f64;
        Self {
            mse,
            log10_mse: if mse == 0.0 { f64::NEG_INFINITY } else { mse.log10() },
            count,
        }
    }
}

/// Pooled MSE over every target entry of `graphs` (all nodes of all graphs
/// for node-level tasks).
pub fn evaluate(model: &AdaptiveModel, graphs: &[Graph]) -> Result<Metrics> {
    if graphs.is_empty() {
        return Err(AmpError::contract("cannot evaluate on an empty graph set"));
    }
    let mut sse = 0.0;
    let mut count = 0;
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Graph> = chunk.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let (pred, _) = model.predict(&batch)?;
        let target = match model.level() {
            TargetLevel::Node => batch.node_targets,
            TargetLevel::Graph => batch.graph_targets,
        }
        .ok_or_else(|| AmpError::contract("graphs have no targets"))?;
        sse += squared_error(pred.data(), target.data());
        count += target.numel();
    }
    Ok(Metrics::from_sums(sse, count))
}

pub fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

fn is_depth_param(name: &str) -> bool {
    name.starts_with("depth.")
}

/// One optimizer step on `batch`; returns the ELBO before the update.
pub fn train_step(
    model: &mut AdaptiveModel,
    adam: &mut Adam,
    batch: &GraphBatch,
    data_scale: f64,
) -> Result<ElboBreakdown> {
    let (breakdown, grads) = {
        let tape = Tape::new();
        let elbo = model.elbo(&tape, batch, data_scale)?;
        let loss = elbo.total.neg()?;
        (elbo.breakdown(), tape.backward(loss)?)
    };
    model.zero_grad();
    grads.accumulate_into(model.active_parameters_mut());
    adam.step(model.active_parameters_mut(), |n| !is_depth_param(n))?;
    Ok(breakdown)
}

/// Trains with per-epoch depth updates and early stopping on validation
/// MSE. The returned model is the best-validation snapshot.
pub fn fit(model: &mut AdaptiveModel, data: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(AmpError::contract("training and validation splits must be nonempty"));
    }
    if data.task != model.config.task {
        return Err(AmpError::contract("dataset task differs from the model task"));
    }
    if config.max_epochs == 0 {
        return Err(AmpError::contract("max_epochs must be at least 1"));
    }
    let n_train = data.train.len();
    let bs = config.batch_size.unwrap_or(n_train).clamp(1, n_train);
    let full_batch = (bs == n_train)
        .then(|| GraphBatch::new(&data.train.iter().collect::<Vec<_>>()))
        .transpose()?;

    let mut adam = Adam::new(config.adam);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut aborted = None;

    for epoch in 1..=config.max_epochs {
        let outcome = (|| -> Result<ElboBreakdown> {
            let mut sum = ElboBreakdown::default();
            let mut steps = 0.0;
            if let Some(batch) = &full_batch {
                sum = train_step(model, &mut adam, batch, 1.0)?;
                steps = 1.0;
            } else {
                let mut order: Vec<usize> = (0..n_train).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(epoch as u64);
                order.shuffle(&mut rng);
                for idx in order.chunks(bs) {
                    let graphs: Vec<&Graph> = idx.iter().map(|&i| &data.train[i]).collect();
                    let batch = GraphBatch::new(&graphs)?;
                    let scale = n_train as f64 / graphs.len() as f64;
                    let e = train_step(model, &mut adam, &batch, scale)?;
                    sum.data += e.data;
                    sum.entropy += e.entropy;
                    sum.depth_prior += e.depth_prior;
                    sum.weight_prior += e.weight_prior;
                    sum.total += e.total;
                    steps += 1.0;
                }
            }
            Ok(ElboBreakdown {
                data: sum.data / steps,
                entropy: sum.entropy / steps,
                depth_prior: sum.depth_prior / steps,
                weight_prior: sum.weight_prior / steps,
                total: sum.total / steps,
            })
        })();
        let elbo = match outcome {
            Ok(e) => e,
            Err(e @ AmpError::NonFinite { .. }) => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        model.update_depth()?;
        let val = evaluate(model, &data.val)?;
        if !val.mse.is_finite() {
            aborted = Some("non-finite validation MSE".into());
            break;
        }
        history.push(EpochRecord {
            epoch,
            elbo,
            val_mse: val.mse,
            test_mse: None,
            l_hat: model.active_layers(),
            depth_params: model.depth.describe(),
        });
        match stopper.observe(epoch, val.mse) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&best, &data.test)?)
    };
    if let (Some(last), Some(t)) = (history.last_mut(), test) {
        last.test_mse = Some(t.mse);
    }
    Ok(FitResult {
        history,
        best,
        best_epoch: stopper.best_epoch.unwrap_or(0),
        best_val_mse: stopper.best,
        test,
        aborted,
    })
}

pub const HISTORY_HEADER: [&str; 10] = [
    "epoch",
    "elbo_total",
    "elbo_data",
    "elbo_entropy",
    "elbo_depth_prior",
    "elbo_weight_prior",
    "val_mse",
    "test_mse",
    "l_hat",
    "depth_params",
];

/// CSV with one row per epoch; depth parameters are `name=value` pairs
/// joined by `;`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", HISTORY_HEADER.join(","))?;
    for r in history {
        let depth: Vec<String> = r
            .depth_params
            .iter()
            .map(|(k, v)| format!("{k}={v:e}"))
            .collect();
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            r.epoch,
            r.elbo.total,
            r.elbo.data,
            r.elbo.entropy,
            r.elbo.depth_prior,
            r.elbo.weight_prior,
            r.val_mse,
            r.test_mse.map(|t| format!("{t:e}")).unwrap_or_default(),
            r.l_hat,
            depth.join(";")
        )?;
    }
    w.flush()?;
    Ok(())
}
