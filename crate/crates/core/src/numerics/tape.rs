//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value; `backward` replays the
//! nodes in reverse. Leaf gradients persist across `backward` calls and
//! accumulate until [`Tape::zero_grad`]; the training loops always start a
//! fresh tape per step, so accumulation is never relied on implicitly.

use super::kernels::{self, AttnDims, MatMut, MatRef};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `y`'s shape is a suffix of `x`'s; `y` is tiled over the leading axes.
    AddBroadcast(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        probs: Vec<f32>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records `t` as a leaf, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Trainable leaf holding a copy of `t`'s values.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor invariant")
            .with_requires_grad(true);
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * n];
        kernels::gemm(
            1.0,
            MatRef::dense(self.data(a), m, k),
            MatRef::dense(self.data(b), k, n),
            0.0,
            MatMut::dense(&mut out, m, n),
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Batched product `[g, m, k] · [g, k, n] → [g, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err!("bmm of {:?} and {:?}", sa, sb));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0f32; g * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..g {
            kernels::gemm(
                1.0,
                MatRef::dense(&da[i * m * k..(i + 1) * m * k], m, k),
                MatRef::dense(&db[i * k * n..(i + 1) * k * n], k, n),
                0.0,
                MatMut::dense(&mut out[i * m * n..(i + 1) * m * n], m, n),
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![g, m, n], out)?, Op::Bmm(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f32, f32) -> f32) -> Result<(Vec<usize>, Vec<f32>)> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{} of {:?} and {:?}", name, self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((self.shape(a).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    /// `x + y` where `y.shape` is a suffix of `x.shape` (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(dim_err!("cannot broadcast {:?} onto {:?}", sy, sx));
        }
        let shape = sx.to_vec();
        let yd = self.data(y);
        let n = yd.len().max(1);
        let out: Vec<f32> = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(yd).map(|(a, b)| a + b))
            .collect();
        let rg = self.rg(&[x, y]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBroadcast(x, y), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out: Vec<f32> = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Scale(x, factor), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f32> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Relu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<f32> = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Gelu(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        if t.rank() == 0 || n == 0 {
            return Err(dim_err!("softmax over empty axis of {:?}", t.shape()));
        }
        let mut out = t.data().to_vec();
        kernels::softmax_rows(&mut out, n);
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    /// Per-row standardization over the last axis, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.value(x).rank() == 0 || d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err!(
                "layer_norm of {:?} with gain {:?} and bias {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let mut out = vec![0.0f32; self.value(x).numel()];
        let (xhat, inv_std) = kernels::layer_norm(self.data(x), self.data(gain), self.data(bias), d, &mut out);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product self-attention on `[batch·seq, width]`
    /// projections. Heads take consecutive `width / heads` column blocks.
    /// Returns the concatenated head outputs, same shape as `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 2 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(dim_err!(
                "attention with q {:?}, k {:?}, v {:?}",
                shape,
                self.shape(k),
                self.shape(v)
            ));
        }
        let width = shape[1];
        if heads == 0 || width % heads != 0 || batch * seq != shape[0] {
            return Err(dim_err!(
                "attention over {:?} with batch {}, seq {}, heads {}",
                shape,
                batch,
                seq,
                heads
            ));
        }
        let dims = AttnDims {
            batch,
            seq,
            heads,
            width,
        };
        let (out, probs) = kernels::attention(self.data(q), self.data(k), self.data(v), dims);
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Attention {
                q,
                k,
                v,
                dims,
                probs,
            },
            rg,
        ))
    }

    /// Attention probabilities of an attention node, `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f32]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", t.shape(), shape));
        }
        let out = t.data().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Reshape(x), rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f32 = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f32;
        let s: f32 = self.data(x).iter().sum::<f32>() / n;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Gradient accumulated into a trainable leaf by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from a single-element `loss`. Adds the resulting
    /// gradients into every reachable trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    /// Accumulation buffer for input `v`, or `None` when `v` needs no gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f32>>]) -> Option<&'g mut Vec<f32>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Moves the accumulation buffer for `v` out of `grads` so several inputs
    /// can be written at once. Inputs may alias (self-attention passes the
    /// same node as q, k and v), in which case later takes get fresh zeros
    /// and [`restore`] merges them back.
    fn take_slot(&self, v: Var, grads: &mut [Option<Vec<f32>>]) -> Option<Vec<f32>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).numel();
        match grads[v.0].take() {
            Some(buf) if !buf.is_empty() => {
                grads[v.0] = Some(Vec::new());
                Some(buf)
            }
            _ => {
                grads[v.0] = Some(Vec::new());
                Some(vec![0.0; n])
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!(),
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let gm = MatRef::dense(g, m, n);
                if let Some(da) = self.slot(a, grads) {
                    kernels::gemm(1.0, gm, MatRef::dense(self.data(b), k, n).t(), 1.0, MatMut::dense(da, m, k));
                }
                if let Some(db) = self.slot(b, grads) {
                    kernels::gemm(1.0, MatRef::dense(self.data(a), m, k).t(), gm, 1.0, MatMut::dense(db, k, n));
                }
            }
            &Op::Bmm(a, b) => {
                let sa = self.shape(a);
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(b)[2];
                if let Some(da) = self.slot(a, grads) {
                    let bd = self.data(b);
                    for j in 0..bs {
                        kernels::gemm(
                            1.0,
                            MatRef::dense(&g[j * m * n..(j + 1) * m * n], m, n),
                            MatRef::dense(&bd[j * k * n..(j + 1) * k * n], k, n).t(),
                            1.0,
                            MatMut::dense(&mut da[j * m * k..(j + 1) * m * k], m, k),
                        );
                    }
                }
                if let Some(db) = self.slot(b, grads) {
                    let ad = self.data(a);
                    for j in 0..bs {
                        kernels::gemm(
                            1.0,
                            MatRef::dense(&ad[j * m * k..(j + 1) * m * k], m, k).t(),
                            MatRef::dense(&g[j * m * n..(j + 1) * m * n], m, n),
                            1.0,
                            MatMut::dense(&mut db[j * k * n..(j + 1) * k * n], k, n),
                        );
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(da) = self.slot(a, grads) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = self.slot(b, grads) {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(da) = self.slot(a, grads) {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(db) = self.slot(b, grads) {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            &Op::Mul(a, b) => {
                if let Some(da) = self.slot(a, grads) {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(self.data(b)) {
                        *d += x * y;
                    }
                }
                if let Some(db) = self.slot(b, grads) {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(self.data(a)) {
                        *d += x * y;
                    }
                }
            }
            &Op::AddBroadcast(x, y) => {
                if let Some(dx) = self.slot(x, grads) {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(dy) = self.slot(y, grads) {
                    let n = dy.len().max(1);
                    for row in g.chunks_exact(n) {
                        dy.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::Scale(x, f) => {
                if let Some(dx) = self.slot(x, grads) {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v * f);
                }
            }
            &Op::Relu(x) => {
                if let Some(dx) = self.slot(x, grads) {
                    for ((d, v), &xi) in dx.iter_mut().zip(g).zip(self.data(x)) {
                        if xi > 0.0 {
                            *d += v;
                        }
                    }
                }
            }
            &Op::Gelu(x) => {
                if let Some(dx) = self.slot(x, grads) {
                    for ((d, v), &xi) in dx.iter_mut().zip(g).zip(self.data(x)) {
                        *d += v * kernels::gelu_grad(xi);
                    }
                }
            }
            &Op::Softmax(x) => {
                let n = node.value.last_dim();
                if let Some(dx) = self.slot(x, grads) {
                    kernels::softmax_rows_backward(node.value.data(), g, dx, n);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let mut dx = self.take_slot(*x, grads);
                let mut dgain = self.take_slot(*gain, grads);
                let mut dbias = self.take_slot(*bias, grads);
                kernels::layer_norm_backward(
                    xhat,
                    inv_std,
                    self.data(*gain),
                    g,
                    d,
                    dx.as_deref_mut(),
                    dgain.as_deref_mut(),
                    dbias.as_deref_mut(),
                );
                restore(grads, *x, dx);
                restore(grads, *gain, dgain);
                restore(grads, *bias, dbias);
            }
            Op::Attention { q, k, v, dims, probs } => {
                let mut dq = self.take_slot(*q, grads);
                let mut dk = self.take_slot(*k, grads);
                let mut dv = self.take_slot(*v, grads);
                kernels::attention_backward(
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    g,
                    *dims,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                restore(grads, *q, dq);
                restore(grads, *k, dk);
                restore(grads, *v, dv);
            }
            &Op::Reshape(x) => {
                if let Some(dx) = self.slot(x, grads) {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            &Op::Sum(x) => {
                if let Some(dx) = self.slot(x, grads) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(dx) = self.slot(x, grads) {
                    let s = g[0] / dx.len().max(1) as f32;
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
        }
    }
}

fn restore(grads: &mut [Option<Vec<f32>>], v: Var, buf: Option<Vec<f32>>) {
    if let Some(buf) = buf {
        match &mut grads[v.0] {
            Some(acc) if !acc.is_empty() => acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b),
            slot => *slot = Some(buf),
        }
    }
}
