//! The adaptive-depth model: a growable stack of message-passing layers,
//! each with its own readout and message filter, weighted by a learned
//! distribution over depth.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};

use crate::autodiff::{stack, Parameter, Tape, Tensor, Var};
use crate::distributions::{depth_elbo_terms_from_weights, LayerPrior, LayerVariational};
use crate::error::{AmpError, Result};
use crate::graphs::{GraphBatch, TargetLevel, TaskSpec};
use crate::mp::{Filter, FilterMode, MpKind, MpLayer, Mlp, Readout};

pub const DEFAULT_WEIGHT_PRIOR_VAR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: MpKind,
    pub dim: usize,
    pub filter: FilterMode,
    pub task: TaskSpec,
    /// `s²` of the Gaussian weight prior `N(0, s² I)`.
    pub weight_prior_var: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: MpKind, dim: usize, filter: FilterMode, task: TaskSpec, seed: u64) -> Self {
        Self {
            kind,
            dim,
            filter,
            task,
            weight_prior_var: DEFAULT_WEIGHT_PRIOR_VAR,
            seed,
        }
    }
}

/// Layer `ℓ` of the stack. Layer 1 has no message passing; its embeddings
/// come from the input encoder. The filter of layer `ℓ` gates the messages
/// sent into layer `ℓ + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBlock {
    pub mp: Option<MpLayer>,
    pub readout: Readout,
    pub filter: Option<Filter>,
}

impl LayerBlock {
    fn new(config: &ModelConfig, layer: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(layer as u64));
        let name = format!("layer{layer}");
        let d = config.dim;
        let mp = (layer > 1).then(|| MpLayer::new(config.kind, &format!("{name}.mp"), d, &mut rng));
        let readout = Readout::new(
            config.task.level(),
            &format!("{name}.readout"),
            d,
            config.task.target_dim(),
            &mut rng,
        );
        let filter = Filter::new(
            config.filter,
            &format!("{name}.filter"),
            config.task.feature_dim(),
            d,
            &mut rng,
        );
        Self {
            mp,
            readout,
            filter,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.mp.as_ref().map(|m| m.parameters()).unwrap_or_default();
        p.extend(self.readout.parameters());
        if let Some(f) = &self.filter {
            p.extend(f.parameters());
        }
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.mp.as_mut().map(|m| m.parameters_mut()).unwrap_or_default();
        p.extend(self.readout.parameters_mut());
        if let Some(f) = &mut self.filter {
            p.extend(f.parameters_mut());
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveModel {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub blocks: Vec<LayerBlock>,
    pub depth: LayerVariational,
    pub prior: LayerPrior,
}

/// Tape values of one forward pass over layers `1..=L̂`.
pub struct Forward<'t> {
    pub x: Var<'t>,
    pub embeddings: Vec<Var<'t>>,
    pub predictions: Vec<Var<'t>>,
    /// `filters[i]` gates the messages into layer `i + 2`; `None` when
    /// filtering is off.
    pub filters: Vec<Option<Var<'t>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub data: f64,
    pub entropy: f64,
    pub depth_prior: f64,
    pub weight_prior: f64,
    pub total: f64,
}

pub struct ElboVars<'t> {
    pub data: Var<'t>,
    pub entropy: Var<'t>,
    pub depth_prior: Var<'t>,
    pub weight_prior: Var<'t>,
    pub total: Var<'t>,
}

impl ElboVars<'_> {
    pub fn breakdown(&self) -> ElboBreakdown {
        ElboBreakdown {
            data: self.data.item(),
            entropy: self.entropy.item(),
            depth_prior: self.depth_prior.item(),
            weight_prior: self.weight_prior.item(),
            total: self.total.item(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthUpdate {
    pub old_support: usize,
    pub new_support: usize,
    /// Layer numbers that were freshly instantiated.
    pub appended: Vec<usize>,
    /// Layer numbers kept but excluded from the forward pass.
    pub retained: Vec<usize>,
}

impl DepthUpdate {
    pub fn is_empty(&self) -> bool {
        self.old_support == self.new_support && self.appended.is_empty()
    }
}

impl AdaptiveModel {
    pub fn new(config: ModelConfig, depth: LayerVariational, prior: LayerPrior) -> Result<Self> {
        if config.dim == 0 {
            return Err(AmpError::contract("embedding dimension must be positive"));
        }
        if !(config.weight_prior_var > 0.0) {
            return Err(AmpError::contract("weight prior variance must be positive"));
        }
        prior.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Mlp::new(
            "encoder",
            config.task.feature_dim(),
            config.dim,
            config.dim,
            &mut rng,
        );
        let blocks = (1..=depth.support())
            .map(|l| LayerBlock::new(&config, l))
            .collect();
        Ok(Self {
            config,
            encoder,
            blocks,
            depth,
            prior,
        })
    }

    /// Current `L̂`.
    pub fn active_layers(&self) -> usize {
        self.depth.support()
    }

    pub fn instantiated_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn level(&self) -> TargetLevel {
        self.config.task.level()
    }

    /// Embeddings of layers `from + 1 ..= to`, starting from `h` at layer
    /// `from` (`from ≥ 1`).
    pub fn propagate<'t>(
        &self,
        tape: &'t Tape,
        batch: &GraphBatch,
        x: Var<'t>,
        h: Var<'t>,
        from: usize,
        to: usize,
    ) -> Result<(Vec<Var<'t>>, Vec<Option<Var<'t>>>)> {
        if from == 0 || to > self.blocks.len() {
            return Err(AmpError::contract(format!(
                "layers {from}..{to} outside the {} instantiated layers",
                self.blocks.len()
            )));
        }
        let mut hs = Vec::with_capacity(to.saturating_sub(from));
        let mut fs = Vec::with_capacity(to.saturating_sub(from));
        let mut cur = h;
        for layer in from + 1..=to {
            let f = match &self.blocks[layer - 2].filter {
                Some(filter) => Some(filter.eval(tape, x, cur)?),
                None => None,
            };
            let mp = self.blocks[layer - 1]
                .mp
                .as_ref()
                .ok_or_else(|| AmpError::contract(format!("layer {layer} has no message passing")))?;
            cur = mp.forward(tape, batch, cur, f)?;
            hs.push(cur);
            fs.push(f);
        }
        Ok((hs, fs))
    }

    /// Embeddings of layer 1 (the input encoding).
    pub fn encode<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.encoder.forward(tape, x)?.tanh()
    }

    pub fn forward_all<'t>(&self, tape: &'t Tape, batch: &GraphBatch) -> Result<Forward<'t>> {
        self.forward_layers(tape, batch, self.active_layers())
    }

    pub fn forward_layers<'t>(
        &self,
        tape: &'t Tape,
        batch: &GraphBatch,
        layers: usize,
    ) -> Result<Forward<'t>> {
        let x = tape.constant(batch.features.clone());
        let h1 = self.encode(tape, x)?;
        let (rest, filters) = self.propagate(tape, batch, x, h1, 1, layers)?;
        let mut embeddings = vec![h1];
        embeddings.extend(rest);
        let predictions = embeddings
            .iter()
            .zip(&self.blocks)
            .map(|(&h, b)| b.readout.forward(tape, batch, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forward {
            x,
            embeddings,
            predictions,
            filters,
        })
    }

    /// Per-layer predictions and embeddings as plain tensors.
    pub fn forward_values(&self, batch: &GraphBatch) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let tape = Tape::new();
        let fw = self.forward_all(&tape, batch)?;
        Ok((
            fw.predictions.iter().map(Var::value).collect(),
            fw.embeddings.iter().map(Var::value).collect(),
        ))
    }

    /// Mixture-mean prediction `Σ_ℓ q̂(ℓ) ŷ^ℓ` and the weights used.
    pub fn predict(&self, batch: &GraphBatch) -> Result<(Tensor, Vec<f64>)> {
        let weights = self.depth.renormalized_weights();
        let (preds, _) = self.forward_values(batch)?;
        let mut out = Tensor::zeros(preds[0].shape());
        for (w, p) in weights.iter().zip(&preds) {
            out.add_assign(&p.map(|v| v * w));
        }
        Ok((out, weights))
    }

    fn targets<'a>(&self, batch: &'a GraphBatch) -> Result<&'a Tensor> {
        match self.level() {
            TargetLevel::Node => batch.node_targets.as_ref(),
            TargetLevel::Graph => batch.graph_targets.as_ref(),
        }
        .ok_or_else(|| AmpError::contract("batch has no targets for this task level"))
    }

    /// ELBO on `batch`, with the data term multiplied by `data_scale`
    /// (`N / B` for an unbiased minibatch estimate of the full-data term).
    pub fn elbo<'t>(&self, tape: &'t Tape, batch: &GraphBatch, data_scale: f64) -> Result<ElboVars<'t>> {
        let fw = self.forward_all(tape, batch)?;
        let targets = tape.constant(self.targets(batch)?.clone());

        let mut sq_errors = Vec::with_capacity(fw.predictions.len());
        for p in &fw.predictions {
            let pv = p.value();
            if !pv.all_finite() {
                let bad = pv.data().iter().position(|v| !v.is_finite()).unwrap_or(0) / pv.cols();
                let graph = match self.level() {
                    TargetLevel::Node => batch.graph_of_node[bad],
                    TargetLevel::Graph => bad,
                };
                return Err(AmpError::NonFinite {
                    what: "prediction".into(),
                    graph: Some(graph),
                });
            }
            sq_errors.push(p.sub(targets)?.square()?.sum()?);
        }
        let weights = self.depth.layer_weights(tape)?;
        let se = stack(tape, &sq_errors)?;
        let data = weights.mul(se)?.sum()?.scale(-0.5 * data_scale)?;

        let (entropy, depth_prior) = depth_elbo_terms_from_weights(tape, weights, &self.prior)?;

        // θ_j enters every Ω_ℓ with ℓ ≥ j, so its prior is weighted by the
        // tail mass Σ_{ℓ≥j} q̂(ℓ)
        let l = fw.predictions.len();
        let mut norms = Vec::with_capacity(l);
        for (j, block) in self.blocks[..l].iter().enumerate() {
            let mut acc = tape.scalar(0.0);
            if j == 0 {
                for p in self.encoder.parameters() {
                    acc = acc.add(tape.param(p).square()?.sum()?)?;
                }
            }
            for p in block.parameters() {
                acc = acc.add(tape.param(p).square()?.sum()?)?;
            }
            norms.push(acc);
        }
        let mut upper = Tensor::zeros(&[l, l]);
        for j in 0..l {
            for k in j..l {
                upper.set(j, k, 1.0);
            }
        }
        let tails = tape
            .constant(upper)
            .matmul(weights.reshape(&[l, 1])?)?
            .reshape(&[l])?;
        let weight_prior = stack(tape, &norms)?
            .mul(tails)?
            .sum()?
            .scale(-0.5 / self.config.weight_prior_var)?;

        let total = data.add(entropy)?.add(depth_prior)?.add(weight_prior)?;
        if !total.item().is_finite() {
            return Err(AmpError::NonFinite {
                what: "ELBO".into(),
                graph: None,
            });
        }
        Ok(ElboVars {
            data,
            entropy,
            depth_prior,
            weight_prior,
            total,
        })
    }

    /// Re-truncates the depth distribution; grows the stack when `L̂`
    /// exceeds the instantiated layers, keeps surplus layers on shrink.
    pub fn update_depth(&mut self) -> Result<DepthUpdate> {
        let old_support = self.depth.support();
        let new_support = self.depth.truncate()?;
        let mut appended = Vec::new();
        while self.blocks.len() < new_support {
            let layer = self.blocks.len() + 1;
            self.blocks.push(LayerBlock::new(&self.config, layer));
            appended.push(layer);
        }
        Ok(DepthUpdate {
            old_support,
            new_support,
            appended,
            retained: (new_support + 1..=self.blocks.len()).collect(),
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.encoder.parameters();
        for b in &self.blocks {
            p.extend(b.parameters());
        }
        p.extend(self.depth.parameters());
        p
    }

    /// Encoder, active layers and depth parameters: everything the current
    /// ELBO depends on.
    pub fn active_parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let l = self.depth.support();
        let mut p = self.encoder.parameters_mut();
        for b in &mut self.blocks[..l] {
            p.extend(b.parameters_mut());
        }
        p.extend(self.depth.parameters_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.encoder.parameters_mut() {
            p.zero_grad();
        }
        for b in &mut self.blocks {
            for p in b.parameters_mut() {
                p.zero_grad();
            }
        }
        for p in self.depth.parameters_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests;
