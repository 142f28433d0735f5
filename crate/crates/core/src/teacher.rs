//! Encoder-only attention teacher forecasting an `H`-step residual trajectory.
//!
//! ```text
//! h⁰_τ  = W_in u_τ + b_in + p_τ                  (p: fixed sinusoidal table)
//! H̃ˡ    = LN(Hˡ⁻¹ + MHA(Hˡ⁻¹))                   (post-norm)
//! Hˡ    = LN(H̃ˡ + W₂ GELU(W₁ H̃ˡ + b₁) + b₂)
//! α     = softmax_τ(w_pᵀ h_τ),  c = Σ α_τ h_τ      (attention pooling)
//! ΔP̂    = W_out c + b_out,      P̂_{t+h} = P_t + ΔP̂_{t+h}
//! ```
//!
//! MHA projections carry no bias. Attention is bidirectional over the
//! history since every token is already observed.

use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{uniform_fan_in, Linear, LinearVars, RngState, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherConfig {
    /// History length `L`.
    pub history: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    /// Token width `d_u`.
    pub input_dim: usize,
    /// Model width `d_m`.
    pub model_dim: usize,
    /// Encoder blocks `N_T`.
    pub layers: usize,
    /// Attention heads `K`.
    pub heads: usize,
    /// Feed-forward hidden width.
    pub ff_dim: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            history: 360,
            horizon: 15,
            input_dim: 7,
            model_dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("input_dim", self.input_dim),
            ("model_dim", self.model_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("teacher {name} must be at least 1")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Per-head width `d_k`.
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Trainable parameters implied by the shapes alone.
    pub fn param_count(&self) -> usize {
        let (du, dm, dff, h) = (self.input_dim, self.model_dim, self.ff_dim, self.horizon);
        let input = du * dm + dm;
        let attention = 4 * dm * dm;
        let ffn = dm * dff + dff + dff * dm + dm;
        let norms = 4 * dm;
        let pool = dm;
        let head = dm * h + h;
        input + self.layers * (attention + ffn + norms) + pool + head
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
    pub norm1_gain: Tensor,
    pub norm1_bias: Tensor,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2_gain: Tensor,
    pub norm2_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    config: TeacherConfig,
    pub input: Linear,
    positions: Tensor,
    pub layers: Vec<EncoderLayer>,
    /// Attention-pooling score vector `w_p`.
    pub pool: Tensor,
    pub head: Linear,
}

/// Tape handles for every trainable teacher tensor.
#[derive(Clone, Debug)]
pub struct TeacherVars {
    input: LinearVars,
    positions: Var,
    layers: Vec<LayerVars>,
    pool: Var,
    head: LinearVars,
}

#[derive(Clone, Debug)]
struct LayerVars {
    query: Var,
    key: Var,
    value: Var,
    output: Var,
    norm1_gain: Var,
    norm1_bias: Var,
    ff1: LinearVars,
    ff2: LinearVars,
    norm2_gain: Var,
    norm2_bias: Var,
}

impl LayerVars {
    fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.query, self.key, self.value, self.output, self.norm1_gain, self.norm1_bias];
        v.extend(self.ff1.vars());
        v.extend(self.ff2.vars());
        v.extend([self.norm2_gain, self.norm2_bias]);
        v
    }
}

impl TeacherVars {
    /// Same order as [`TeacherModel::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.input.vars().to_vec();
        for l in &self.layers {
            v.extend(l.vars());
        }
        v.push(self.pool);
        v.extend(self.head.vars());
        v
    }
}

/// Graph outputs of one batched teacher forward.
#[derive(Clone, Copy, Debug)]
pub struct TeacherGraph {
    /// `[B, H]`.
    pub residuals: Var,
    /// Pooled context `c`, `[B, d_m]`.
    pub context: Var,
    /// Pooling weights `α`, `[B, L]`.
    pub pool_weights: Var,
    /// Final encoder states, `[B·L, d_m]`.
    pub encoded: Var,
}

/// One window's teacher output.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryForecast {
    pub anchor: f32,
    pub residuals: Vec<f32>,
    /// `anchor + residuals[h]`, elementwise.
    pub absolute: Vec<f32>,
    pub context: Vec<f32>,
    pub pool_weights: Vec<f32>,
}

impl TrajectoryForecast {
    pub fn new(anchor: f32, residuals: Vec<f32>, context: Vec<f32>, pool_weights: Vec<f32>) -> Self {
        let absolute = residuals.iter().map(|r| anchor + r).collect();
        Self {
            anchor,
            residuals,
            absolute,
            context,
            pool_weights,
        }
    }
}

/// Fixed sinusoidal table `[L, d]`: sin on even columns, cos on odd.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, dim]);
    let data = t.data_mut();
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    t
}

impl EncoderLayer {
    fn init(cfg: &TeacherConfig, rng: &mut RngState) -> Self {
        let dm = cfg.model_dim;
        Self {
            query: uniform_fan_in(&[dm, dm], dm, rng),
            key: uniform_fan_in(&[dm, dm], dm, rng),
            value: uniform_fan_in(&[dm, dm], dm, rng),
            output: uniform_fan_in(&[dm, dm], dm, rng),
            norm1_gain: Tensor::full(&[dm], 1.0),
            norm1_bias: Tensor::zeros(&[dm]),
            ff1: Linear::init(dm, cfg.ff_dim, rng),
            ff2: Linear::init(cfg.ff_dim, dm, rng),
            norm2_gain: Tensor::full(&[dm], 1.0),
            norm2_bias: Tensor::zeros(&[dm]),
        }
    }

    fn named_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        let entries: [(&str, &Tensor); 12] = [
            ("attn.query", &self.query),
            ("attn.key", &self.key),
            ("attn.value", &self.value),
            ("attn.output", &self.output),
            ("norm1.gain", &self.norm1_gain),
            ("norm1.bias", &self.norm1_bias),
            ("ff1.weight", &self.ff1.weight),
            ("ff1.bias", &self.ff1.bias),
            ("ff2.weight", &self.ff2.weight),
            ("ff2.bias", &self.ff2.bias),
            ("norm2.gain", &self.norm2_gain),
            ("norm2.bias", &self.norm2_bias),
        ];
        out.extend(entries.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let [w1, b1] = self.ff1.params_mut();
        let [w2, b2] = self.ff2.params_mut();
        vec![
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.norm1_gain,
            &mut self.norm1_bias,
            w1,
            b1,
            w2,
            b2,
            &mut self.norm2_gain,
            &mut self.norm2_bias,
        ]
    }

    fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            query: tape.param(&self.query),
            key: tape.param(&self.key),
            value: tape.param(&self.value),
            output: tape.param(&self.output),
            norm1_gain: tape.param(&self.norm1_gain),
            norm1_bias: tape.param(&self.norm1_bias),
            ff1: self.ff1.bind(tape),
            ff2: self.ff2.bind(tape),
            norm2_gain: tape.param(&self.norm2_gain),
            norm2_bias: tape.param(&self.norm2_bias),
        }
    }
}

impl LayerVars {
    fn forward(&self, tape: &mut Tape, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let q = tape.matmul(x, self.query)?;
        let k = tape.matmul(x, self.key)?;
        let v = tape.matmul(x, self.value)?;
        let attn = tape.attention(q, k, v, batch, seq, heads)?;
        let mixed = tape.matmul(attn, self.output)?;
        let res1 = tape.add(x, mixed)?;
        let h1 = tape.layer_norm(res1, self.norm1_gain, self.norm1_bias)?;

        let f = self.ff1.forward(tape, h1)?;
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, f)?;
        let res2 = tape.add(h1, f)?;
        tape.layer_norm(res2, self.norm2_gain, self.norm2_bias)
    }
}

impl TeacherModel {
    pub fn init(config: TeacherConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let dm = config.model_dim;
        let input = Linear::init(config.input_dim, dm, rng);
        let layers = (0..config.layers).map(|_| EncoderLayer::init(&config, rng)).collect();
        let pool = uniform_fan_in(&[dm], dm, rng);
        let head = Linear::init(dm, config.horizon, rng);
        Ok(Self {
            positions: sinusoidal_positions(config.history, dm),
            config,
            input,
            layers,
            pool,
            head,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    /// Fixed positional table `[L, d_m]`; not trainable and not serialized.
    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// Trainable tensors with stable dotted names, in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("input.weight".to_string(), &self.input.weight),
            ("input.bias".to_string(), &self.input.bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            l.named_params(&format!("layers.{i}"), &mut out);
        }
        out.push(("pool.weight".into(), &self.pool));
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable trainable tensors in the order of [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.input.params_mut().into_iter().collect();
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.push(&mut self.pool);
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuilds a model from named tensors, checking every shape against
    /// `config`.
    pub fn from_named(config: TeacherConfig, mut tensors: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let mut rng = RngState::new(0);
        let mut model = Self::init(config, &mut rng)?;
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

    pub fn bind(&self, tape: &mut Tape) -> TeacherVars {
        TeacherVars {
            input: self.input.bind(tape),
            positions: tape.constant(self.positions.clone()),
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            pool: tape.param(&self.pool),
            head: self.head.bind(tape),
        }
    }

    /// Batched forward over `tokens` of shape `[B·L, d_u]`.
    pub fn forward(&self, tape: &mut Tape, vars: &TeacherVars, tokens: Var, batch: usize) -> Result<TeacherGraph> {
        let cfg = &self.config;
        let (l, dm) = (cfg.history, cfg.model_dim);
        if tape.shape(tokens) != [batch * l, cfg.input_dim] {
            return Err(Error::Config(format!(
                "teacher expects tokens [{}, {}], got {:?}",
                batch * l,
                cfg.input_dim,
                tape.shape(tokens)
            )));
        }
        let x = vars.input.forward(tape, tokens)?;
        let x = tape.reshape(x, &[batch, l, dm])?;
        let x = tape.add_broadcast(x, vars.positions)?;
        let mut h = tape.reshape(x, &[batch * l, dm])?;
        for layer in &vars.layers {
            h = layer.forward(tape, h, batch, l, cfg.heads)?;
        }

        let pool = tape.reshape(vars.pool, &[dm, 1])?;
        let scores = tape.matmul(h, pool)?;
        let scores = tape.reshape(scores, &[batch, l])?;
        let alpha = tape.softmax(scores)?;
        let alpha3 = tape.reshape(alpha, &[batch, 1, l])?;
        let h3 = tape.reshape(h, &[batch, l, dm])?;
        let context = tape.bmm(alpha3, h3)?;
        let context = tape.reshape(context, &[batch, dm])?;

        let residuals = vars.head.forward(tape, context)?;
        Ok(TeacherGraph {
            residuals,
            context,
            pool_weights: alpha,
            encoded: h,
        })
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        let cfg = &self.config;
        if w.history_len() != cfg.history || w.feature_dim + 1 != cfg.input_dim {
            return Err(Error::Config(format!(
                "window with history {} and {} features does not fit teacher (L={}, d_u={})",
                w.history_len(),
                w.feature_dim,
                cfg.history,
                cfg.input_dim
            )));
        }
        Ok(())
    }

    /// Stacks token matrices of `windows` into `[B·L, d_u]`.
    pub fn batch_tokens(&self, windows: &[&Window]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(windows.len() * self.config.history * self.config.input_dim);
        for w in windows {
            self.check_window(w)?;
            data.extend(build_tokens(w).into_data());
        }
        Tensor::new(vec![windows.len() * self.config.history, self.config.input_dim], data)
    }

    /// Residual trajectories `[B, H]` for prebuilt tokens `[B·L, d_u]`.
    pub fn predict_tokens(&self, tokens: Tensor, batch: usize) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let tokens = tape.constant(tokens);
        let g = self.forward(&mut tape, &vars, tokens, batch)?;
        Ok(tape.value(g.residuals).data().to_vec())
    }

    /// Trajectory forecasts for a batch of windows (no gradients kept).
    pub fn forecast_batch(&self, windows: &[&Window]) -> Result<Vec<TrajectoryForecast>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let tokens = tape.constant(self.batch_tokens(windows)?);
        let g = self.forward(&mut tape, &vars, tokens, windows.len())?;
        let (h, dm, l) = (self.config.horizon, self.config.model_dim, self.config.history);
        let res = tape.value(g.residuals).data();
        let ctx = tape.value(g.context).data();
        let alpha = tape.value(g.pool_weights).data();
        Ok(windows
            .iter()
            .enumerate()
            .map(|(b, w)| {
                TrajectoryForecast::new(
                    w.anchor,
                    res[b * h..(b + 1) * h].to_vec(),
                    ctx[b * dm..(b + 1) * dm].to_vec(),
                    alpha[b * l..(b + 1) * l].to_vec(),
                )
            })
            .collect())
    }

    /// Forecasts for any number of windows, evaluated in chunks of `chunk`.
    pub fn forecast_all(&self, windows: &[Window], chunk: usize) -> Result<Vec<TrajectoryForecast>> {
        let mut out = Vec::with_capacity(windows.len());
        for part in windows.chunks(chunk.max(1)) {
            let refs: Vec<&Window> = part.iter().collect();
            out.extend(self.forecast_batch(&refs)?);
        }
        Ok(out)
    }
}

/// Token matrix `[L, d_u]` with rows `u_τ = [P_τ; x_τ]`.
pub fn build_tokens(window: &Window) -> Tensor {
    let (l, d) = (window.history_len(), window.feature_dim);
    let mut data = Vec::with_capacity(l * (d + 1));
    for (t, &p) in window.history_load.iter().enumerate() {
        data.push(p);
        data.extend_from_slice(&window.history_feat[t * d..(t + 1) * d]);
    }
    Tensor::new(vec![l, d + 1], data).expect("token shape")
}

/// Forecast for a single window.
pub fn predict_trajectory(model: &TeacherModel, window: &Window) -> Result<TrajectoryForecast> {
    Ok(model.forecast_batch(&[window])?.remove(0))
}

/// Mean squared trajectory error `(1/H) Σ_h (P_t + ΔP̂_{t+h} − P_{t+h})²`.
pub fn teacher_loss(forecast: &TrajectoryForecast, window: &Window) -> Result<f32> {
    if forecast.residuals.len() != window.horizon() {
        return Err(dim_err!(
            "forecast horizon {} vs window horizon {}",
            forecast.residuals.len(),
            window.horizon()
        ));
    }
    let sum: f32 = forecast
        .residuals
        .iter()
        .zip(&window.future_load)
        .map(|(r, y)| {
            let e = window.anchor + r - y;
            e * e
        })
        .sum();
    Ok(sum / window.horizon() as f32)
}

/// Batched trajectory loss on the tape: mean over windows of
/// [`teacher_loss`]. Targets enter as residual increments `P_{t+h} − P_t`.
pub fn trajectory_loss(tape: &mut Tape, residuals: Var, windows: &[&Window]) -> Result<Var> {
    let h = tape.shape(residuals)[1];
    let mut target = Vec::with_capacity(windows.len() * h);
    for w in windows {
        target.extend(w.future_load.iter().map(|y| y - w.anchor));
    }
    let target = tape.constant(Tensor::new(vec![windows.len(), h], target)?);
    let diff = tape.sub(residuals, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}
