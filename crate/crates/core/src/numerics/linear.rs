use rand::Rng;

use super::rng::RngState;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Affine map `y = x·W + b` on row-vector batches. `weight` is stored
/// `[in, out]`, the transpose of the column-vector convention.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// `Uniform(±1/√in)` weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut RngState) -> Self {
        Self {
            weight: uniform_fan_in(&[inputs, outputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_broadcast(y, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Tensor with entries drawn from `Uniform(±1/√fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
    t
}
