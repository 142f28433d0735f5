//! Point-wise MLP student.
//!
//! ```text
//! h₁ = ReLU(W_s1 v_t + b_s1),  h₂ = ReLU(W_s2 h₁ + b_s2)
//! ΔP̂ = w_yᵀ h₂ + b_y,          z = W_z h₂ + b_z
//! ```
//!
//! `v_t = [P_t; x_t]`. The embedding head `z` only exists to receive the
//! feature-distillation signal and can be dropped at deployment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kernels::{gemm, MatRef, MatMut};
use crate::numerics::{Linear, LinearVars, RngState, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentConfig {
    /// Input width `d_u`.
    pub input_dim: usize,
    /// Hidden width `d_h`.
    pub hidden_dim: usize,
    /// Embedding width `d_z`.
    pub embed_dim: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            input_dim: 7,
            hidden_dim: 64,
            embed_dim: 16,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("student dimensions must be at least 1".into()));
        }
        Ok(())
    }

    /// Closed-form count; `with_embed_head` adds `W_z, b_z`.
    pub fn param_count(&self, with_embed_head: bool) -> usize {
        let (du, dh, dz) = (self.input_dim, self.hidden_dim, self.embed_dim);
        let core = (du * dh + dh) + (dh * dh + dh) + (dh + 1);
        core + if with_embed_head { dh * dz + dz } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    config: StudentConfig,
    pub layer1: Linear,
    pub layer2: Linear,
    pub residual_head: Linear,
    pub embed_head: Option<Linear>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentOutput {
    pub residual: f32,
    /// `P_t + residual`.
    pub absolute: f32,
    pub embedding: Option<Vec<f32>>,
}

#[derive(Clone, Debug)]
pub struct StudentVars {
    layer1: LinearVars,
    layer2: LinearVars,
    residual_head: LinearVars,
    embed_head: Option<LinearVars>,
}

impl StudentVars {
    /// Same order as [`StudentModel::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::with_capacity(8);
        v.extend(self.layer1.vars());
        v.extend(self.layer2.vars());
        v.extend(self.residual_head.vars());
        if let Some(e) = &self.embed_head {
            v.extend(e.vars());
        }
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StudentGraph {
    /// `[B, 1]`.
    pub residual: Var,
    /// `[B, d_z]` when the embedding head is present.
    pub embedding: Option<Var>,
}

impl StudentModel {
    pub fn init(config: StudentConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let (du, dh, dz) = (config.input_dim, config.hidden_dim, config.embed_dim);
        Ok(Self {
            config,
            layer1: Linear::init(du, dh, rng),
            layer2: Linear::init(dh, dh, rng),
            residual_head: Linear::init(dh, 1, rng),
            embed_head: Some(Linear::init(dh, dz, rng)),
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(8);
        out.extend(linear_entries("layer1", &self.layer1));
        out.extend(linear_entries("layer2", &self.layer2));
        out.extend(linear_entries("residual_head", &self.residual_head));
        if let Some(e) = &self.embed_head {
            out.extend(linear_entries("embed_head", e));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(8);
        out.extend(self.layer1.params_mut());
        out.extend(self.layer2.params_mut());
        out.extend(self.residual_head.params_mut());
        if let Some(e) = &mut self.embed_head {
            out.extend(e.params_mut());
        }
        out
    }

    /// Parameters currently held, including the embedding head if loaded.
    pub fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters on the deployed residual path only.
    pub fn count_deploy_params(&self) -> usize {
        self.config.param_count(false)
    }

    pub fn fp32_bytes(&self) -> usize {
        4 * self.count_params()
    }

    /// Drops `W_z, b_z` for deployment.
    pub fn without_embed_head(mut self) -> Self {
        self.embed_head = None;
        self
    }

    /// Rebuilds a model from named tensors; the embedding head is loaded
    /// only when `embed_head` is set.
    pub fn from_named(
        config: StudentConfig,
        embed_head: bool,
        mut tensors: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let mut model = Self::init(config, &mut RngState::new(0))?;
        if !embed_head {
            model.embed_head = None;
        }
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = tensors(name).ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape) -> StudentVars {
        StudentVars {
            layer1: self.layer1.bind(tape),
            layer2: self.layer2.bind(tape),
            residual_head: self.residual_head.bind(tape),
            embed_head: self.embed_head.as_ref().map(|e| e.bind(tape)),
        }
    }

    /// Batched training forward over `inputs` of shape `[B, d_u]`.
    pub fn forward(&self, tape: &mut Tape, vars: &StudentVars, inputs: Var) -> Result<StudentGraph> {
        let shape = tape.shape(inputs);
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::Config(format!(
                "student expects inputs [B, {}], got {:?}",
                self.config.input_dim, shape
            )));
        }
        let h = vars.layer1.forward(tape, inputs)?;
        let h = tape.relu(h);
        let h = vars.layer2.forward(tape, h)?;
        let h = tape.relu(h);
        let residual = vars.residual_head.forward(tape, h)?;
        let embedding = match &vars.embed_head {
            Some(e) => Some(e.forward(tape, h)?),
            None => None,
        };
        Ok(StudentGraph { residual, embedding })
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if len != batch * self.config.input_dim {
            return Err(Error::Config(format!(
                "student expects {} input values for batch {}, got {len}",
                batch * self.config.input_dim,
                batch
            )));
        }
        Ok(())
    }

    fn hidden(&self, inputs: &[f32], batch: usize) -> Vec<f32> {
        let dh = self.config.hidden_dim;
        let h1 = dense_relu(&self.layer1, inputs, batch);
        debug_assert_eq!(h1.len(), batch * dh);
        dense_relu(&self.layer2, &h1, batch)
    }

    /// Residual-path inference for a row-major `[B, d_u]` batch, without
    /// a tape. This is the deployed path.
    pub fn predict_residuals(&self, inputs: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.check_input(inputs.len(), batch)?;
        let h = self.hidden(inputs, batch);
        Ok(dense(&self.residual_head, &h, batch))
    }

    /// Embeddings `z` for a `[B, d_u]` batch.
    pub fn predict_embeddings(&self, inputs: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.check_input(inputs.len(), batch)?;
        let e = self
            .embed_head
            .as_ref()
            .ok_or_else(|| Error::Usage("student was loaded without its embedding head".into()))?;
        Ok(dense(e, &self.hidden(inputs, batch), batch))
    }
}

fn linear_entries<'a>(name: &str, l: &'a Linear) -> [(String, &'a Tensor); 2] {
    [(format!("{name}.weight"), &l.weight), (format!("{name}.bias"), &l.bias)]
}

fn dense(layer: &Linear, x: &[f32], batch: usize) -> Vec<f32> {
    let (i, o) = (layer.inputs(), layer.outputs());
    let mut y: Vec<f32> = layer.bias.data().iter().copied().cycle().take(batch * o).collect();
    gemm(
        1.0,
        MatRef::dense(x, batch, i),
        MatRef::dense(layer.weight.data(), i, o),
        1.0,
        MatMut::dense(&mut y, batch, o),
    );
    y
}

fn dense_relu(layer: &Linear, x: &[f32], batch: usize) -> Vec<f32> {
    let mut y = dense(layer, x, batch);
    y.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// One forward on a single point input `v_t = [P_t; x_t]`.
pub fn student_forward(model: &StudentModel, input: &[f32]) -> Result<StudentOutput> {
    let residual = model.predict_residuals(input, 1)?[0];
    let embedding = match model.embed_head {
        Some(_) => Some(model.predict_embeddings(input, 1)?),
        None => None,
    };
    Ok(StudentOutput {
        residual,
        absolute: input[0] + residual,
        embedding,
    })
}

/// Recursive multi-step forecast from `(P_t, x_t)`: each step feeds its own
/// forecast back as the next load input while `x_t` is held fixed.
pub fn rolling_forecast(model: &StudentModel, load: f32, features: &[f32], steps: usize) -> Result<Vec<f32>> {
    if steps == 0 {
        return Err(Error::Usage("rolling_forecast needs at least one step".into()));
    }
    let mut input = Vec::with_capacity(1 + features.len());
    input.push(load);
    input.extend_from_slice(features);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = input[0] + model.predict_residuals(&input, 1)?[0];
        out.push(next);
        input[0] = next;
    }
    Ok(out)
}
