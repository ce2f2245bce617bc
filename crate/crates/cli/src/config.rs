//! JSON run configuration: parsing, flag overrides, validation and
//! resolution of preset defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use amp_core::distributions::{LayerPrior, LayerVariational, DEFAULT_QUANTILE};
use amp_core::graphs::{DatasetSpec, GeneratorKind, Preset, TaskKind, TaskSpec};
use amp_core::mp::{FilterMode, MpKind};
use amp_core::train::{AdamConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const EMBEDDING_DIMS: [usize; 3] = [10, 20, 30];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub depth: DepthInit,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_prior")]
    pub prior: LayerPrior,
    #[serde(default = "default_weight_prior_var")]
    pub weight_prior_var: f64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Preset value when absent.
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Preset value when absent.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Full-batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Independent training runs (seeds `seed`, `seed + 1`, …).
    #[serde(default = "one")]
    pub repeats: usize,
    /// Model snapshot used by `evaluate` and `diagnose`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

fn default_preset() -> Preset {
    Preset::Desk
}

fn default_quantile() -> f64 {
    DEFAULT_QUANTILE
}

fn default_prior() -> LayerPrior {
    LayerPrior::Uninformative
}

fn default_weight_prior_var() -> f64 {
    10.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory written by `generate`; the fields below are ignored then.
    pub path: Option<PathBuf>,
    pub sizes: Option<[usize; 3]>,
    pub n_range: Option<[usize; 2]>,
    pub generators: Option<Vec<GeneratorKind>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: MpKind,
    pub dim: usize,
    pub filter: FilterMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: MpKind::Gcn,
            dim: 10,
            filter: FilterMode::Embedding,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// Initial depth distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthInit {
    Poisson { rate: f64 },
    FoldedNormal { mu: f64, sigma: f64 },
    Mixture { components: Vec<Component> },
    Fixed { layers: usize },
}

impl Default for DepthInit {
    fn default() -> Self {
        DepthInit::Poisson { rate: 10.0 }
    }
}

impl DepthInit {
    pub fn build(&self, quantile: f64) -> amp_core::Result<LayerVariational> {
        match self {
            DepthInit::Poisson { rate } => LayerVariational::poisson(*rate, quantile),
            DepthInit::FoldedNormal { mu, sigma } => LayerVariational::folded_normal(*mu, *sigma, quantile),
            DepthInit::Mixture { components } => {
                let c: Vec<_> = components.iter().map(|c| (c.mu, c.sigma, c.weight)).collect();
                LayerVariational::mixture(&c, quantile)
            }
            DepthInit::Fixed { layers } => LayerVariational::fixed(*layers),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DepthInit::Poisson { rate } => format!("poisson(rate={rate})"),
            DepthInit::FoldedNormal { mu, sigma } => format!("folded_normal(mu={mu},sigma={sigma})"),
            DepthInit::Mixture { components } => {
                let parts: Vec<String> = components
                    .iter()
                    .map(|c| format!("{}:{}:{}", c.mu, c.sigma, c.weight))
                    .collect();
                format!("mixture({})", parts.join(","))
            }
            DepthInit::Fixed { layers } => format!("fixed({layers})"),
        }
    }
}

pub fn prior_label(p: &LayerPrior) -> String {
    match p {
        LayerPrior::Uninformative => "uninformative".into(),
        LayerPrior::Poisson { rate } => format!("poisson(rate={rate})"),
        LayerPrior::FoldedNormal { mu, sigma } => format!("folded_normal(mu={mu},sigma={sigma})"),
    }
}

/// Axes of the grid search; the model kind stays fixed per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dims: Vec<usize>,
    pub depths: Vec<DepthInit>,
    pub priors: Vec<LayerPrior>,
    pub filters: Vec<FilterMode>,
}

impl Default for GridSection {
    fn default() -> Self {
        let fn_init = |sigma| DepthInit::FoldedNormal { mu: 10.0, sigma };
        Self {
            dims: EMBEDDING_DIMS.to_vec(),
            depths: vec![
                DepthInit::Poisson { rate: 10.0 },
                fn_init(5.0),
                fn_init(10.0),
                DepthInit::Mixture {
                    components: vec![
                        Component {
                            mu: 5.0,
                            sigma: 3.0,
                            weight: 0.5,
                        },
                        Component {
                            mu: 15.0,
                            sigma: 3.0,
                            weight: 0.5,
                        },
                    ],
                },
            ],
            priors: vec![
                LayerPrior::Uninformative,
                LayerPrior::Poisson { rate: 5.0 },
                LayerPrior::FoldedNormal { mu: 5.0, sigma: 10.0 },
            ],
            filters: vec![FilterMode::None, FilterMode::Input, FilterMode::Embedding],
        }
    }
}

impl GridSection {
    pub fn len(&self) -> usize {
        self.dims.len() * self.depths.len() * self.priors.len() * self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub split: SplitName,
    pub sensitivity_graphs: usize,
    pub sensitivity_nodes: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            split: SplitName::Test,
            sensitivity_graphs: 4,
            sensitivity_nodes: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub allow_offgrid: bool,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.dataset.path.as_mut(), cfg.checkpoint.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate(overrides.allow_offgrid)?;
        Ok(cfg)
    }

    /// Parses JSON text and applies `overrides`; does not validate.
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: ".".into(),
            message: e.to_string(),
        })?;
        if let (Some(seed), Some(obj)) = (overrides.seed, value.as_object_mut()) {
            obj.insert("seed".into(), seed.into());
        }
        serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }

    /// Every violated constraint, each with its field path.
    pub fn violations(&self, allow_offgrid: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Violation {
                field: field.into(),
                message,
            })
        };
        if !allow_offgrid && !EMBEDDING_DIMS.contains(&self.model.dim) {
            bad(
                "model.dim",
                format!("{} is outside {EMBEDDING_DIMS:?} (pass --allow-offgrid to permit)", self.model.dim),
            );
        }
        if self.model.dim == 0 {
            bad("model.dim", "must be positive".into());
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            bad("quantile", format!("{} is outside (0, 1)", self.quantile));
        }
        depth_violations("depth", &self.depth, &mut bad);
        if let Err(e) = self.prior.validate() {
            bad("prior", e.to_string());
        }
        if !(self.weight_prior_var > 0.0) {
            bad("weight_prior_var", "must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0) {
            bad("optimizer.lr", "must be nonnegative".into());
        }
        for (name, b) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad(name, format!("{b} is outside [0, 1)"));
            }
        }
        if !(o.eps > 0.0) {
            bad("optimizer.eps", "must be positive".into());
        }
        if !(o.weight_decay >= 0.0) {
            bad("optimizer.weight_decay", "must be nonnegative".into());
        }
        for (name, v) in [("epochs", self.epochs), ("batch_size", self.batch_size)] {
            if v == Some(0) {
                bad(name, "must be at least 1".into());
            }
        }
        if self.repeats == 0 {
            bad("repeats", "must be at least 1".into());
        }
        let d = &self.dataset;
        if let Some(p) = &d.path {
            if !p.join("manifest.json").is_file() {
                bad("dataset.path", format!("{} has no manifest.json", p.display()));
            }
        }
        if let Some(s) = d.sizes {
            if s.contains(&0) {
                bad("dataset.sizes", "every split needs at least one graph".into());
            }
        }
        if let Some([lo, hi]) = d.n_range {
            if lo == 0 || lo > hi {
                bad("dataset.n_range", format!("[{lo}, {hi}] is not a valid node range"));
            }
        }
        if d.generators.as_ref().is_some_and(Vec::is_empty) {
            bad("dataset.generators", "must not be empty".into());
        }
        if let Some(p) = &self.checkpoint {
            if !p.is_file() {
                bad("checkpoint", format!("{} does not exist", p.display()));
            }
        }
        let g = &self.grid;
        for (name, empty) in [
            ("grid.dims", g.dims.is_empty()),
            ("grid.depths", g.depths.is_empty()),
            ("grid.priors", g.priors.is_empty()),
            ("grid.filters", g.filters.is_empty()),
        ] {
            if empty {
                bad(name, "must not be empty".into());
            }
        }
        for (i, &dim) in g.dims.iter().enumerate() {
            if dim == 0 || (!allow_offgrid && !EMBEDDING_DIMS.contains(&dim)) {
                bad(&format!("grid.dims[{i}]"), format!("{dim} is outside {EMBEDDING_DIMS:?}"));
            }
        }
        for (i, depth) in g.depths.iter().enumerate() {
            depth_violations(&format!("grid.depths[{i}]"), depth, &mut bad);
        }
        for (i, p) in g.priors.iter().enumerate() {
            if let Err(e) = p.validate() {
                bad(&format!("grid.priors[{i}]"), e.to_string());
            }
        }
        if self.diagnostics.sensitivity_graphs == 0 || self.diagnostics.sensitivity_nodes == 0 {
            bad("diagnostics", "sensitivity sample sizes must be positive".into());
        }
        out
    }

    pub fn validate(&self, allow_offgrid: bool) -> Result<(), ConfigError> {
        let v = self.violations(allow_offgrid);
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Copy with every preset-dependent default written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.epochs.get_or_insert(self.preset.max_epochs());
        r.patience.get_or_insert(self.preset.patience());
        if r.dataset.path.is_none() {
            let spec = self.dataset_spec();
            r.dataset.sizes = Some(spec.sizes);
            r.dataset.n_range = Some(spec.n_range);
            r.dataset.generators = Some(spec.generators);
        }
        r
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::new(self.task)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::preset(self.task_spec(), self.preset, self.seed);
        if let Some(s) = self.dataset.sizes {
            spec.sizes = s;
        }
        if let Some(r) = self.dataset.n_range {
            spec.n_range = r;
        }
        if let Some(g) = &self.dataset.generators {
            spec.generators = g.clone();
        }
        spec
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs.unwrap_or(self.preset.max_epochs()),
            patience: self.patience.unwrap_or(self.preset.patience()),
            adam: self.optimizer,
            batch_size: self.batch_size,
            seed,
        }
    }
}

fn depth_violations(field: &str, depth: &DepthInit, bad: &mut impl FnMut(&str, String)) {
    match depth {
        DepthInit::Poisson { rate } if !(*rate > 0.0) => bad(&format!("{field}.rate"), "must be positive".into()),
        DepthInit::FoldedNormal { sigma, .. } if !(*sigma > 0.0) => {
            bad(&format!("{field}.sigma"), "must be positive".into())
        }
        DepthInit::Mixture { components } => {
            if components.is_empty() {
                bad(&format!("{field}.components"), "must not be empty".into());
            }
            for (i, c) in components.iter().enumerate() {
                if !(c.sigma > 0.0) {
                    bad(&format!("{field}.components[{i}].sigma"), "must be positive".into());
                }
                if !(c.weight > 0.0) {
                    bad(&format!("{field}.components[{i}].weight"), "must be positive".into());
                }
            }
        }
        DepthInit::Fixed { layers: 0 } => bad(&format!("{field}.layers"), "must be at least 1".into()),
        _ => {}
    }
}
