//! Straight-line f64 re-implementations used as oracles, plus fixtures.
//!
//! Nothing here calls into the library's numerics; parameters are copied
//! out of the models by name and every formula is written out again.

#![allow(dead_code)]

pub mod checks;
pub mod grad;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2pd::data::Window;
use s2pd::teacher::TeacherConfig;

pub type Params = HashMap<String, Vec<f64>>;

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn params_of<'a>(named: impl IntoIterator<Item = (String, &'a s2pd::numerics::Tensor)>) -> Params {
    named.into_iter().map(|(n, t)| (n, to_f64(t.data()))).collect()
}

/// `[m, k] · [k, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `x·W + b` for `rows` row vectors.
pub fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, inputs: usize, outputs: usize) -> Vec<f64> {
    let mut y = matmul(x, w, rows, inputs, outputs);
    for r in 0..rows {
        for j in 0..outputs {
            y[r * outputs + j] += b[j];
        }
    }
    y
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) * inv * gain[j] + bias[j];
        }
    }
    out
}

/// Multi-head self-attention for one sequence of `seq` rows; heads own
/// consecutive column blocks.
pub fn attention(q: &[f64], k: &[f64], v: &[f64], seq: usize, width: usize, heads: usize) -> Vec<f64> {
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = vec![0.0; seq * width];
    for h in 0..heads {
        let off = h * dk;
        for i in 0..seq {
            let scores: Vec<f64> = (0..seq)
                .map(|j| (0..dk).map(|c| q[i * width + off + c] * k[j * width + off + c]).sum::<f64>() * scale)
                .collect();
            let p = softmax(&scores);
            for c in 0..dk {
                out[i * width + off + c] = (0..seq).map(|j| p[j] * v[j * width + off + c]).sum();
            }
        }
    }
    out
}

pub fn positions(len: usize, dim: usize) -> Vec<f64> {
    let mut p = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let angle = pos as f64 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            p[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    p
}

pub struct TeacherOut {
    pub encoded: Vec<f64>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Encoder, attention pooling and head for one window.
pub fn teacher_forward(cfg: &TeacherConfig, p: &Params, w: &Window) -> TeacherOut {
    let (l, du, dm, dff) = (cfg.history, cfg.input_dim, cfg.model_dim, cfg.ff_dim);
    let fd = w.feature_dim;
    let mut tokens = Vec::with_capacity(l * du);
    for t in 0..l {
        tokens.push(w.history_load[t] as f64);
        tokens.extend(w.history_feat[t * fd..(t + 1) * fd].iter().map(|&v| v as f64));
    }
    let mut x = affine(&tokens, &p["input.weight"], &p["input.bias"], l, du, dm);
    for (a, b) in x.iter_mut().zip(positions(l, dm)) {
        *a += b;
    }
    for layer in 0..cfg.layers {
        let g = |n: &str| &p[&format!("layers.{layer}.{n}")];
        let q = matmul(&x, g("attn.query"), l, dm, dm);
        let k = matmul(&x, g("attn.key"), l, dm, dm);
        let v = matmul(&x, g("attn.value"), l, dm, dm);
        let a = attention(&q, &k, &v, l, dm, cfg.heads);
        let mixed = matmul(&a, g("attn.output"), l, dm, dm);
        let r1: Vec<f64> = x.iter().zip(&mixed).map(|(a, b)| a + b).collect();
        let h1 = layer_norm(&r1, g("norm1.gain"), g("norm1.bias"), dm);
        let f: Vec<f64> = affine(&h1, g("ff1.weight"), g("ff1.bias"), l, dm, dff).into_iter().map(gelu).collect();
        let f = affine(&f, g("ff2.weight"), g("ff2.bias"), l, dff, dm);
        let r2: Vec<f64> = h1.iter().zip(&f).map(|(a, b)| a + b).collect();
        x = layer_norm(&r2, g("norm2.gain"), g("norm2.bias"), dm);
    }
    let scores: Vec<f64> = (0..l)
        .map(|t| (0..dm).map(|j| x[t * dm + j] * p["pool.weight"][j]).sum())
        .collect();
    let alpha = softmax(&scores);
    let context: Vec<f64> = (0..dm).map(|j| (0..l).map(|t| alpha[t] * x[t * dm + j]).sum()).collect();
    let residuals = affine(&context, &p["head.weight"], &p["head.bias"], 1, dm, cfg.horizon);
    TeacherOut {
        encoded: x,
        alpha,
        context,
        residuals,
    }
}

/// Mean over windows and steps of `(P_t + ΔP̂ − P_{t+h})²`.
pub fn teacher_loss(cfg: &TeacherConfig, p: &Params, windows: &[Window]) -> f64 {
    let mut s = 0.0;
    for w in windows {
        let out = teacher_forward(cfg, p, w);
        for (r, &y) in out.residuals.iter().zip(&w.future_load) {
            s += (w.anchor as f64 + r - y as f64).powi(2);
        }
    }
    s / (windows.len() * cfg.horizon) as f64
}

/// Student hidden state, residual and optional embedding for one input.
pub fn student_forward(p: &Params, x: &[f64], hidden: usize, embed: Option<usize>) -> (f64, Option<Vec<f64>>) {
    let d = x.len();
    let h1: Vec<f64> = affine(x, &p["layer1.weight"], &p["layer1.bias"], 1, d, hidden).into_iter().map(relu).collect();
    let h2: Vec<f64> = affine(&h1, &p["layer2.weight"], &p["layer2.bias"], 1, hidden, hidden)
        .into_iter()
        .map(relu)
        .collect();
    let r = affine(&h2, &p["residual_head.weight"], &p["residual_head.bias"], 1, hidden, 1)[0];
    let z = embed.map(|dz| affine(&h2, &p["embed_head.weight"], &p["embed_head.bias"], 1, hidden, dz));
    (r, z)
}

/// Composite student objective averaged over the batch:
/// `mean(r − Δy)² + mean(r − ΔP̃)² + λ · Σ‖z − φ(c)‖² / B`.
pub fn composite_loss(
    p: &Params,
    windows: &[Window],
    soft: &[f64],
    contexts: &[Vec<f64>],
    hidden: usize,
    embed: usize,
    lambda: f64,
) -> f64 {
    let b = windows.len() as f64;
    let dm = contexts[0].len();
    let (mut mse, mut logit, mut feat) = (0.0, 0.0, 0.0);
    for (i, w) in windows.iter().enumerate() {
        let x = to_f64(&w.point_input());
        let (r, z) = student_forward(p, &x, hidden, Some(embed));
        let a = w.anchor as f64;
        mse += (r - (w.future_load[0] as f64 - a)).powi(2);
        logit += (r - (soft[i] - a)).powi(2);
        let target = affine(&contexts[i], &p["projection.weight"], &p["projection.bias"], 1, dm, embed);
        feat += z.unwrap().iter().zip(&target).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    }
    mse / b + logit / b + lambda * feat / b
}

/// Central differences of `f` with respect to every entry of `p[name]`.
pub fn central_diff(p: &Params, name: &str, step: f64, f: impl Fn(&Params) -> f64) -> Vec<f64> {
    let mut work = p.clone();
    (0..p[name].len())
        .map(|i| {
            let orig = work[name][i];
            work.get_mut(name).unwrap()[i] = orig + step;
            let up = f(&work);
            work.get_mut(name).unwrap()[i] = orig - step;
            let down = f(&work);
            work.get_mut(name).unwrap()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(&a, b)| (a as f64 - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Windows with values in `[0, 1)` and six feature channels.
pub fn random_windows(seed: u64, count: usize, history: usize, horizon: usize) -> Vec<Window> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let history_load = uniform(&mut r, history, 0.0, 1.0);
            Window {
                anchor_time: 60 * i as i64,
                anchor: history_load[history - 1],
                history_feat: uniform(&mut r, history * 6, 0.0, 1.0),
                feature_dim: 6,
                future_load: uniform(&mut r, horizon, 0.0, 1.0),
                history_load,
            }
        })
        .collect()
}

/// The downsized configuration used by the gradient and oracle checks.
pub fn small_teacher() -> TeacherConfig {
    TeacherConfig {
        history: 4,
        horizon: 3,
        input_dim: 7,
        model_dim: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
    }
}
