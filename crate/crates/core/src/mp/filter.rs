use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::Mlp;
use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Constant all-ones filter.
    None,
    /// `F(v, ℓ) = f_ℓ(x_v)`
    Input,
    /// `F(v, ℓ) = f_ℓ(h_v^ℓ)`
    Embedding,
}

impl FilterMode {
    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::Input => "input",
            FilterMode::Embedding => "embedding",
        }
    }
}

/// Per-layer soft message gate: a sigmoid-output MLP of width `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub mode: FilterMode,
    pub mlp: Mlp,
}

impl Filter {
    /// `None` for [`FilterMode::None`], which needs no parameters.
    pub fn new(
        mode: FilterMode,
        name: &str,
        input_dim: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<Self> {
        let fan_in = match mode {
            FilterMode::None => return None,
            FilterMode::Input => input_dim,
            FilterMode::Embedding => d,
        };
        Some(Self {
            mode,
            mlp: Mlp::new(name, fan_in, d, d, rng),
        })
    }

    /// `n × d` gate values in (0, 1).
    pub fn eval<'t>(&self, tape: &'t Tape, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let input = match self.mode {
            FilterMode::Input => x,
            _ => h,
        };
        self.mlp.forward(tape, input)?.sigmoid()
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.mlp.parameters()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.mlp.parameters_mut()
    }

    /// Forces every gate to `sigmoid(bias)` by zeroing the output weights.
    pub fn saturate(&mut self, bias: f64) {
        self.mlp.out.w.value.fill(0.0);
        self.mlp.out.b.value.fill(bias);
    }
}

/// All-ones gate for unfiltered layers.
pub fn ones_filter(tape: &Tape, n: usize, d: usize) -> Var<'_> {
    tape.constant(Tensor::ones(&[n, d]))
}
