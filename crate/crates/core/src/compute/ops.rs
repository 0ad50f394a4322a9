//! Forward and backward kernels. Matrices are rank-2 row-major tensors; the
//! tape in [`super::Graph`] composes these.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// Norms below this are treated as degenerate.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        s => Err(Error::ShapeMismatch(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

/// `a (m x k) · b (k x n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul lhs")?;
    let (k2, n) = require_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul {m}x{k} by {k2}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_matrix(a, "matmul_tn lhs")?;
    let (k2, n) = require_matrix(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul_tn {k}x{m}ᵀ by {k2}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul_nt lhs")?;
    let (n, k2) = require_matrix(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_matrix(a, "transpose")?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}

/// Adds bias vector `b` (length n) to every row of `x` (m x n).
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, n) = require_matrix(x, "add_bias input")?;
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!("bias of length {} for {} columns", b.len(), n)));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Column sums of `g` (m x n) as a tensor shaped like `bias_shape`.
pub fn column_sums(g: &Tensor, bias_shape: &[usize]) -> Tensor {
    let n = g.cols();
    let mut out = Tensor::zeros(bias_shape);
    for row in g.data().chunks(n) {
        for (o, v) in out.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// `y = x·W + b`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_bias(&matmul(x, w)?, b)
}

/// Returns `(dL/dx, dL/dW, dL/db)` given upstream `g = dL/dy`.
pub fn affine_backward(x: &Tensor, w: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dx = matmul_nt(g, w)?.reshape(x.shape().to_vec())?;
    let x2 = x.clone().reshape(vec![x.rows(), x.cols()])?;
    let dw = matmul_tn(&x2, g)?;
    let db = column_sums(g, b.shape());
    Ok((dx, dw, db))
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn activation_backward(x: &Tensor, y: &Tensor, g: &Tensor, kind: Activation) -> Tensor {
    let data =
        x.data().iter().zip(y.data()).zip(g.data()).map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

pub fn softmax_rows_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.cols();
    let mut out = Tensor::zeros(y.shape());
    for ((orow, yrow), grow) in out.data_mut().chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Mean softmax cross-entropy over rows. Returns `(loss, probabilities)`.
pub fn softmax_xent(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = require_matrix(logits, "softmax_xent")?;
    if classes < 2 {
        return Err(Error::ShapeMismatch(format!("softmax_xent needs >= 2 classes, got {classes}")));
    }
    if targets.len() != rows {
        return Err(Error::ShapeMismatch(format!("{} targets for {} rows", targets.len(), rows)));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::IndexOutOfRange { index: t, size: classes });
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        // log-sum-exp form keeps -log p finite even when p underflows
        let row = logits.row_slice(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    Ok((loss / rows as f64, probs))
}

/// Gradient of the mean cross-entropy: `(p - onehot) / rows`.
pub fn softmax_xent_backward(probs: &Tensor, targets: &[usize]) -> Tensor {
    let rows = probs.rows();
    let mut g = probs.clone();
    let inv = 1.0 / rows as f64;
    for (r, &t) in targets.iter().enumerate() {
        let row = g.row_slice_mut(r);
        row[t] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    g
}

/// Normalizes each row to unit L2 norm. Returns `(unit rows, row norms)`.
pub fn l2_normalize_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let n = x.cols();
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for row in out.data_mut().chunks_mut(n) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm.is_nan() || norm <= NORM_EPSILON {
            return Err(Error::DegenerateNorm);
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Backward of [`l2_normalize_rows`]: `(I - u uᵀ) g / ‖v‖` per row.
pub fn l2_normalize_rows_backward(u: &Tensor, norms: &[f64], g: &Tensor) -> Tensor {
    let n = u.cols();
    let mut out = Tensor::zeros(u.shape());
    for (((orow, urow), grow), &norm) in
        out.data_mut().chunks_mut(n).zip(u.data().chunks(n)).zip(g.data().chunks(n)).zip(norms)
    {
        let dot: f64 = urow.iter().zip(grow).map(|(a, b)| a * b).sum();
        for ((o, &uv), &gv) in orow.iter_mut().zip(urow).zip(grow) {
            *o = (gv - uv * dot) / norm;
        }
    }
    out
}

/// Unit-normalizes a single vector.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= NORM_EPSILON {
        return Err(Error::DegenerateNorm);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub const LAYER_NORM_EPSILON: f64 = 1e-6;

/// Cached statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization with learned gain and bias.
pub fn layer_norm_rows(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(Error::ShapeMismatch(format!("layer norm over {n} columns")));
    }
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in normalized.data_mut().chunks_mut(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + LAYER_NORM_EPSILON).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    let mut y = normalized.clone();
    for row in y.data_mut().chunks_mut(n) {
        for ((v, gv), bv) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * gv + bv;
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_rows_backward(cache: &LayerNormCache, gain: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = g.cols();
    let xhat = &cache.normalized;
    let mut dx = Tensor::zeros(g.shape());
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(gain.shape());
    for (r, (grow, xrow)) in g.data().chunks(n).zip(xhat.data().chunks(n)).enumerate() {
        for j in 0..n {
            dgain.data_mut()[j] += grow[j] * xrow[j];
            dbias.data_mut()[j] += grow[j];
        }
        let dxhat: Vec<f64> = grow.iter().zip(gain.data()).map(|(a, b)| a * b).collect();
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dx = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let is = cache.inv_std[r];
        for (j, o) in dx.row_slice_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[j] - mean_d - xrow[j] * mean_dx);
        }
    }
    (dx, dgain, dbias)
}
