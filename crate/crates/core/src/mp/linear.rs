use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::error::Result;

/// Glorot-uniform `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(&[rows, cols], data).expect("positive dims")
}

/// `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Parameter::new(format!("{name}.w"), glorot(fan_in, fan_out, rng)),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn from_values(name: &str, w: Tensor, b: Tensor) -> Self {
        Self {
            w: Parameter::new(format!("{name}.w"), w),
            b: Parameter::new(format!("{name}.b"), b),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(&self.w))?.add_row(tape.param(&self.b))
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

/// One hidden layer with tanh, linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(name: &str, fan_in: usize, width: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::new(&format!("{name}.hidden"), fan_in, width, rng),
            out: Linear::new(&format!("{name}.out"), width, fan_out, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.hidden.forward(tape, x)?.tanh()?;
        self.out.forward(tape, h)
    }

    pub fn fan_out(&self) -> usize {
        self.out.fan_out()
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.hidden.parameters();
        v.extend(self.out.parameters());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.hidden.parameters_mut();
        v.extend(self.out.parameters_mut());
        v
    }
}
