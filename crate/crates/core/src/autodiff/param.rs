use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Tensor;

/// A learnable tensor with an accumulated gradient.
///
/// Under the first-order (evaluate-at-the-mean) treatment of the weight
/// posterior, the stored value is the variational mean itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Serialize, Deserialize)]
struct ParameterRepr {
    name: String,
    value: Tensor,
}

impl Serialize for Parameter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ParameterRepr {
            name: self.name.clone(),
            value: self.value.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Parameter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = ParameterRepr::deserialize(d)?;
        Ok(Parameter::new(repr.name, repr.value))
    }
}
