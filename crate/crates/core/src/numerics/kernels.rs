//! Raw FP32 kernels shared by the tape's forward and backward passes.
//!
//! GEMM is delegated to `matrixmultiply`, built without its threading
//! feature, so every kernel here runs on the calling thread.

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn dense(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Strided mutable matrix view.
pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f32],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatMut<'a> {
    pub fn dense(data: &'a mut [f32], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a·b + beta * c`.
pub(crate) fn gemm(alpha: f32, a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above for its full extent, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            c.col_stride as isize,
        );
    }
}

/// In-place softmax over contiguous rows of length `n`, max-subtracted.
pub(crate) fn softmax_rows(data: &mut [f32], n: usize) {
    for row in data.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Softmax vector-Jacobian product: `dx = y ⊙ (dy − ⟨dy, y⟩)` per row,
/// accumulated into `dx`.
pub(crate) fn softmax_rows_backward(y: &[f32], dy: &[f32], dx: &mut [f32], n: usize) {
    for ((yr, dyr), dxr) in y.chunks_exact(n).zip(dy.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
        let dot: f32 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yi), &gi) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yi * (gi - dot);
        }
    }
}

pub(crate) const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_6;
pub(crate) const GELU_CUBIC: f32 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) const LAYER_NORM_EPS: f32 = 1e-5;

/// Layer norm over rows of length `d`. Writes the output and returns
/// `(xhat, inv_std)` for the backward pass.
pub(crate) fn layer_norm(
    x: &[f32],
    gain: &[f32],
    bias: &[f32],
    d: usize,
    out: &mut [f32],
) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            xh[j] = (xr[j] - mean) * is;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
    (xhat, inv_std)
}

/// Accumulates layer-norm gradients into whichever of `dx`, `dgain`,
/// `dbias` are requested.
pub(crate) fn layer_norm_backward(
    xhat: &[f32],
    inv_std: &[f32],
    gain: &[f32],
    dy: &[f32],
    d: usize,
    mut dx: Option<&mut [f32]>,
    mut dgain: Option<&mut [f32]>,
    mut dbias: Option<&mut [f32]>,
) {
    let mut dxhat = vec![0.0f32; d];
    for (r, &is) in inv_std.iter().enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        if let Some(dg) = dgain.as_deref_mut() {
            for j in 0..d {
                dg[j] += g[j] * xh[j];
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for j in 0..d {
                db[j] += g[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut sum = 0.0f32;
            let mut sum_xh = 0.0f32;
            for j in 0..d {
                dxhat[j] = g[j] * gain[j];
                sum += dxhat[j];
                sum_xh += dxhat[j] * xh[j];
            }
            let scale = is / d as f32;
            let dxr = &mut dx[r * d..(r + 1) * d];
            for j in 0..d {
                dxr[j] += scale * (d as f32 * dxhat[j] - sum - xh[j] * sum_xh);
            }
        }
    }
}

/// Shape bookkeeping for fused multi-head attention over `[batch·seq, width]`
/// row-major activations, heads occupying consecutive column blocks.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub width: usize,
}

impl AttnDims {
    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn head<'a>(&self, data: &'a [f32], b: usize, h: usize) -> MatRef<'a> {
        MatRef {
            data,
            offset: b * self.seq * self.width + h * self.head_dim(),
            rows: self.seq,
            cols: self.head_dim(),
            row_stride: self.width,
            col_stride: 1,
        }
    }

    fn head_mut<'a>(&self, data: &'a mut [f32], b: usize, h: usize) -> MatMut<'a> {
        MatMut {
            offset: b * self.seq * self.width + h * self.head_dim(),
            rows: self.seq,
            cols: self.head_dim(),
            row_stride: self.width,
            col_stride: 1,
            data,
        }
    }
}

/// `softmax(Q Kᵀ / √d_k) V` per (batch, head). Returns the output and the
/// attention probabilities, laid out `[batch, heads, seq, seq]`.
pub(crate) fn attention(q: &[f32], k: &[f32], v: &[f32], dims: AttnDims) -> (Vec<f32>, Vec<f32>) {
    let AttnDims { batch, seq, heads, width } = dims;
    let scale = 1.0 / (dims.head_dim() as f32).sqrt();
    let mut out = vec![0.0f32; batch * seq * width];
    let mut probs = vec![0.0f32; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            gemm(
                scale,
                dims.head(q, b, h),
                dims.head(k, b, h).t(),
                0.0,
                MatMut::dense(p, seq, seq),
            );
            softmax_rows(p, seq);
            gemm(
                1.0,
                MatRef::dense(p, seq, seq),
                dims.head(v, b, h),
                0.0,
                dims.head_mut(&mut out, b, h),
            );
        }
    }
    (out, probs)
}

/// Gradients of [`attention`] given the upstream `dout`; each requested
/// buffer is accumulated into.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    probs: &[f32],
    dout: &[f32],
    dims: AttnDims,
    mut dq: Option<&mut [f32]>,
    mut dk: Option<&mut [f32]>,
    mut dv: Option<&mut [f32]>,
) {
    let AttnDims { batch, seq, heads, .. } = dims;
    let scale = 1.0 / (dims.head_dim() as f32).sqrt();
    let mut dp = vec![0.0f32; seq * seq];
    let mut ds = vec![0.0f32; seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let p_mat = MatRef::dense(p, seq, seq);
            let g = dims.head(dout, b, h);
            if let Some(dv) = dv.as_deref_mut() {
                gemm(1.0, p_mat.t(), g, 1.0, dims.head_mut(dv, b, h));
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            gemm(1.0, g, dims.head(v, b, h).t(), 0.0, MatMut::dense(&mut dp, seq, seq));
            ds.fill(0.0);
            softmax_rows_backward(p, &dp, &mut ds, seq);
            let ds_mat = MatRef::dense(&ds, seq, seq);
            if let Some(dq) = dq.as_deref_mut() {
                gemm(scale, ds_mat, dims.head(k, b, h), 1.0, dims.head_mut(dq, b, h));
            }
            if let Some(dk) = dk.as_deref_mut() {
                gemm(scale, ds_mat.t(), dims.head(q, b, h), 1.0, dims.head_mut(dk, b, h));
            }
        }
    }
}
