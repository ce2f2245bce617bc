//! Subcommand implementations. Each writes its artifacts under an output
//! directory together with the resolved configuration and a version stamp.

use std::fs;
use std::path::{Path, PathBuf};

use amp_core::amp::{AdaptiveModel, Checkpoint, ModelConfig};
use amp_core::autodiff::Tensor;
use amp_core::diagnostics::{
    diagnose as run_diagnostics, random_bound_table, sensitivity_bound_suite, reachability_suite, BoundSuiteReport,
    DiagnoseOptions, DiagnosticsReport, ReachSuiteReport,
};
use amp_core::distributions::{quantile_suite, QuantileSuiteReport};
use amp_core::graphs::{build_dataset, Dataset, Graph, GraphBatch, Manifest, TargetLevel};
use amp_core::train::{fit, squared_error, write_history, FitResult, Metrics};
use amp_core::AmpError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{prior_label, ConfigError, RunConfig, SplitName};

pub const VERSION_STAMP: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("AMP_GIT_DESCRIBE"), ")");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] AmpError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Creates `dir` and writes `config.json` and `VERSION` into it.
pub fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(&cfg.resolved())?;
    text.push('\n');
    fs::write(dir.join("config.json"), text)?;
    fs::write(dir.join("VERSION"), format!("{VERSION_STAMP}\n"))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.dataset.path {
        Some(p) => Dataset::read_dir(p)?.0,
        None => build_dataset(&cfg.dataset_spec())?,
    };
    if data.task != cfg.task_spec() {
        return Err(CliError::Usage(format!(
            "dataset task {:?} differs from the configured task {:?}",
            data.task.kind, cfg.task
        )));
    }
    Ok(data)
}

pub fn build_model(cfg: &RunConfig, seed: u64) -> Result<AdaptiveModel> {
    let mut mc = ModelConfig::new(cfg.model.kind, cfg.model.dim, cfg.model.filter, cfg.task_spec(), seed);
    mc.weight_prior_var = cfg.weight_prior_var;
    let depth = cfg.depth.build(cfg.quantile)?;
    Ok(AdaptiveModel::new(mc, depth, cfg.prior.clone())?)
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let spec = cfg.dataset_spec();
    let data = build_dataset(&spec)?;
    prepare_dir(out, cfg)?;
    let dir = out.join("dataset");
    fs::create_dir_all(&dir)?;
    let manifest = data.write_dir(&dir, &spec)?;
    prepare_dir(&dir, cfg)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub split: SplitName,
    pub mse: f64,
    /// A number, or the string `"-inf"` for a perfect fit.
    pub log10_mse: serde_json::Value,
    pub count: usize,
}

impl MetricsFile {
    pub fn new(split: SplitName, m: &Metrics) -> Self {
        let log10_mse = if m.log10_mse.is_finite() {
            m.log10_mse.into()
        } else {
            serde_json::Value::String("-inf".into())
        };
        Self {
            split,
            mse: m.mse,
            log10_mse,
            count: m.count,
        }
    }
}

/// One training run: fit, then write history, checkpoint and test metrics
/// into `dir`.
pub fn train_run(cfg: &RunConfig, data: &Dataset, seed: u64, dir: &Path) -> Result<FitResult> {
    let cfg = &RunConfig { seed, ..cfg.clone() };
    let mut model = build_model(cfg, seed)?;
    let result = fit(&mut model, data, &cfg.train_config(seed))?;
    prepare_dir(dir, cfg)?;
    write_history(&dir.join("history.csv"), &result.history)?;
    let run_config = serde_json::to_value(cfg.resolved())?;
    Checkpoint::new(result.best.clone(), result.best_epoch, run_config).save(&dir.join("checkpoint.json"))?;
    if let Some(t) = &result.test {
        write_json(&dir.join("metrics.json"), &MetricsFile::new(SplitName::Test, t))?;
    }
    if let Some(reason) = &result.aborted {
        fs::write(dir.join("ABORTED"), format!("{reason}\n"))?;
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test_mse: Option<f64>,
    pub test_log10_mse: Option<f64>,
    pub l_hat: usize,
    pub aborted: bool,
}

impl RunRow {
    fn new(run: usize, seed: u64, r: &FitResult) -> Self {
        Self {
            run,
            seed,
            epochs: r.history.len(),
            best_epoch: r.best_epoch,
            best_val_mse: r.best_val_mse,
            test_mse: r.test.map(|t| t.mse),
            test_log10_mse: r.test.map(|t| t.log10_mse),
            l_hat: r.best.active_layers(),
            aborted: r.aborted.is_some(),
        }
    }
}

/// `repeats` runs with seeds `seed, seed + 1, …`. A single run writes
/// straight into `out`; several go to `out/run-<i>` plus `runs.csv`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<RunRow>> {
    let data = load_dataset(cfg)?;
    prepare_dir(out, cfg)?;
    let mut rows = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let dir = if cfg.repeats == 1 {
            out.to_owned()
        } else {
            out.join(format!("run-{r}"))
        };
        let result = train_run(cfg, &data, seed, &dir)?;
        rows.push(RunRow::new(r, seed, &result));
    }
    if cfg.repeats > 1 {
        write_csv(&out.join("runs.csv"), &rows)?;
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn split(data: &Dataset, s: SplitName) -> &[Graph] {
    match s {
        SplitName::Train => &data.train,
        SplitName::Val => &data.val,
        SplitName::Test => &data.test,
    }
}

/// Pooled MSE of `predict` over `graphs`, one graph at a time.
pub fn evaluate_with(
    graphs: &[Graph],
    level: TargetLevel,
    mut predict: impl FnMut(&GraphBatch) -> Result<Tensor>,
) -> Result<Metrics> {
    if graphs.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let mut sse = 0.0;
    let mut count = 0;
    for g in graphs {
        let batch = GraphBatch::single(g)?;
        let target = match level {
            TargetLevel::Node => batch.node_targets.as_ref(),
            TargetLevel::Graph => batch.graph_targets.as_ref(),
        }
        .ok_or_else(|| CliError::Usage("graph without targets".into()))?;
        let pred = predict(&batch)?;
        if pred.numel() != target.numel() {
            return Err(CliError::Usage(format!(
                "{} predictions for {} targets",
                pred.numel(),
                target.numel()
            )));
        }
        sse += squared_error(pred.data(), target.data());
        count += target.numel();
    }
    Ok(Metrics::from_sums(sse, count))
}

fn checkpoint_path(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_owned)
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --checkpoint or set \"checkpoint\"".into()))
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<AdaptiveModel> {
    let model = Checkpoint::load(path)?.model;
    if model.config.task != cfg.task_spec() {
        return Err(CliError::Usage(format!(
            "checkpoint was trained for {:?}, config says {:?}",
            model.config.task.kind, cfg.task
        )));
    }
    Ok(model)
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, which: SplitName, out: &Path) -> Result<MetricsFile> {
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint)?)?;
    let data = load_dataset(cfg)?;
    let m = evaluate_with(split(&data, which), model.level(), |b| Ok(model.predict(b)?.0))?;
    prepare_dir(out, cfg)?;
    let file = MetricsFile::new(which, &m);
    write_json(&out.join("metrics.json"), &file)?;
    Ok(file)
}

#[derive(Serialize)]
struct LayerRow {
    layer: usize,
    dirichlet_energy: f64,
    sensitivity: f64,
    filter_fraction: Option<f64>,
}

pub fn diagnose(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<DiagnosticsReport> {
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint)?)?;
    let data = load_dataset(cfg)?;
    let graphs = split(&data, cfg.diagnostics.split);
    let opts = DiagnoseOptions {
        sensitivity_graphs: cfg.diagnostics.sensitivity_graphs,
        sensitivity_nodes: cfg.diagnostics.sensitivity_nodes,
        seed: cfg.seed,
    };
    let mut report = run_diagnostics(&model, graphs, &opts)?;
    let table = random_bound_table(&graphs[0], 2, 3, cfg.seed)?;
    prepare_dir(out, cfg)?;
    let rows: Vec<LayerRow> = report
        .layers
        .iter()
        .map(|l| LayerRow {
            layer: l.layer,
            dirichlet_energy: l.dirichlet_energy,
            sensitivity: l.sensitivity,
            filter_fraction: l.filter_fraction,
        })
        .collect();
    write_csv(&out.join("diagnostics.csv"), &rows)?;
    write_csv(&out.join("bound.csv"), &table.rows)?;
    report.bound_table = Some(table);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub cell: usize,
    pub dim: usize,
    pub depth: String,
    pub prior: String,
    pub filter: String,
    pub status: String,
    pub epochs: usize,
    pub best_val_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_log10_mse: Option<f64>,
    pub l_hat: Option<usize>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub cells: Vec<CellRow>,
    pub selected: Option<usize>,
    /// Test log10-MSE of the selected configuration for each repeat.
    pub final_test_log10_mse: Vec<f64>,
    pub final_mean: Option<f64>,
    pub final_std: Option<f64>,
}

/// Configurations of the grid in product order (dims outermost).
pub fn grid_cells(cfg: &RunConfig) -> Vec<RunConfig> {
    let g = &cfg.grid;
    let mut cells = Vec::with_capacity(g.len());
    for &dim in &g.dims {
        for depth in &g.depths {
            for prior in &g.priors {
                for &filter in &g.filters {
                    let mut c = cfg.clone();
                    c.model.dim = dim;
                    c.model.filter = filter;
                    c.depth = depth.clone();
                    c.prior = prior.clone();
                    cells.push(c);
                }
            }
        }
    }
    cells
}

/// Lowest validation MSE, then smaller `L̂`, then grid order.
pub fn select_cell(rows: &[CellRow]) -> Option<usize> {
    rows.iter()
        .filter_map(|r| Some((r.best_val_mse?, r.l_hat?, r.cell)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, _, cell)| cell)
}

pub fn cell_threads() -> usize {
    std::env::var("AMP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

pub fn gridsearch(cfg: &RunConfig, out: &Path) -> Result<GridOutcome> {
    let data = load_dataset(cfg)?;
    prepare_dir(out, cfg)?;
    let cells = grid_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cell_threads())
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rows: Vec<CellRow> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let dir = out.join("cells").join(format!("cell-{i:03}"));
                let res = train_run(c, &data, cfg.seed, &dir);
                let mut row = CellRow {
                    cell: i,
                    dim: c.model.dim,
                    depth: c.depth.label(),
                    prior: prior_label(&c.prior),
                    filter: c.model.filter.name().into(),
                    status: "ok".into(),
                    epochs: 0,
                    best_val_mse: None,
                    test_mse: None,
                    test_log10_mse: None,
                    l_hat: None,
                    selected: false,
                };
                match res {
                    Ok(r) if r.aborted.is_none() => {
                        row.epochs = r.history.len();
                        row.best_val_mse = Some(r.best_val_mse);
                        row.test_mse = r.test.map(|t| t.mse);
                        row.test_log10_mse = r.test.map(|t| t.log10_mse);
                        row.l_hat = Some(r.best.active_layers());
                    }
                    Ok(r) => row.status = format!("aborted: {}", r.aborted.unwrap_or_default()),
                    Err(e) => row.status = format!("failed: {e}"),
                }
                row
            })
            .collect()
    });
    let selected = select_cell(&rows);
    let mut finals = Vec::new();
    if let Some(s) = selected {
        rows[s].selected = true;
        finals.extend(rows[s].test_log10_mse);
        for r in 1..cfg.repeats {
            let seed = cfg.seed + r as u64;
            let dir = out.join("final").join(format!("run-{r}"));
            let res = train_run(&cells[s], &data, seed, &dir)?;
            finals.extend(res.test.map(|t| t.log10_mse));
        }
    }
    write_csv(&out.join("summary.csv"), &rows)?;
    let (mean, std) = mean_std(&finals);
    let outcome = GridOutcome {
        cells: rows,
        selected,
        final_test_log10_mse: finals,
        final_mean: mean,
        final_std: std,
    };
    write_json(&out.join("final.json"), &serde_json::json!({
        "selected": outcome.selected,
        "config": selected.map(|s| cells[s].resolved()),
        "test_log10_mse": outcome.final_test_log10_mse,
        "mean": outcome.final_mean,
        "std": outcome.final_std,
    }))?;
    Ok(outcome)
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub quantiles: QuantileSuiteReport,
    pub sensitivity_bound: BoundSuiteReport,
    pub reachability: ReachSuiteReport,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.quantiles.passed() && self.sensitivity_bound.passed() && self.reachability.passed()
    }

    pub fn lines(&self) -> Vec<String> {
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let q = &self.quantiles;
        let t1 = &self.sensitivity_bound;
        let t2 = &self.reachability;
        vec![
            format!(
                "[{}] quantile bounds: {} folded-normal + {} mixture cases, {} bracket violations, {} search mismatches",
                mark(q.passed()),
                q.dfn_cases,
                q.mixture_cases,
                q.bracket_violations,
                q.search_mismatches
            ),
            format!(
                "[{}] sensitivity bound: {} models, {} node pairs, {} violations, max ratio {:.6}",
                mark(t1.passed()),
                t1.trials,
                t1.pairs,
                t1.violations,
                t1.max_ratio
            ),
            format!(
                "[{}] reachability: {} cases, {} failures, max distance/(d·ε) {:.6}",
                mark(t2.passed()),
                t2.cases,
                t2.failures,
                t2.max_ratio
            ),
        ]
    }
}

pub fn verify_theorems(seed: u64) -> Result<VerifyReport> {
    Ok(VerifyReport {
        seed,
        quantiles: quantile_suite(200, 100, seed)?,
        sensitivity_bound: sensitivity_bound_suite(20, seed)?,
        reachability: reachability_suite(10, 5, &[1e-2, 1e-3], seed)?,
    })
}

pub fn write_verify(out: &Path, report: &VerifyReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("VERSION"), format!("{VERSION_STAMP}\n"))?;
    write_json(&out.join("verify.json"), report)
}
