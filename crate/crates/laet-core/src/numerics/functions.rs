//! Numeric kernels shared by the plain (inference) and recorded (training)
//! execution paths, plus the standalone softmax / cross-entropy operations
//! and the finite-difference gradient oracle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Clamp applied inside `cross_entropy` so the loss stays total at p = 0.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row count above which matmul parallelizes over output rows. Each output
/// row is produced by exactly one thread, so the result is bitwise identical
/// to the serial computation.
const PAR_ROWS: usize = 64;

/// Numerically stable softmax of a logit vector.
///
/// Subtracts the maximum before exponentiating, so large logits cannot
/// overflow; the argmax of the input is preserved.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty input".into()));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("softmax input must be finite".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Cross-entropy of a probability vector against a class label:
/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(-probs[label].max(LOG_CLAMP).ln())
}

/// Mean cross-entropy over a batch of probability rows.
pub fn cross_entropy_batch(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    assert_eq!(probs.rows(), labels.len(), "batch size mismatch");
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        total += cross_entropy(probs.row(i), label)?;
    }
    Ok(total / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// 2-D kernels. Shape mismatches are programming errors and panic.
// ---------------------------------------------------------------------------

/// `[m,k] x [k,n] -> [m,n]`, i-k-j loop order over row-major storage.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    let bd = b.data();
    let ad = a.data();
    let row_op = |i: usize, out_row: &mut [f64]| {
        let a_row = &ad[i * k..(i + 1) * k];
        for (l, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &bd[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m >= PAR_ROWS {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| row_op(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_op(i, row);
        }
    }
    Tensor::unchecked(vec![m, n], out)
}

/// `[m,k] x [n,k]^T -> [m,n]`: row-by-row dot products, no transposition.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_nt inner dimensions differ: {k} vs {k2}");
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    let row_op = |i: usize, out_row: &mut [f64]| {
        let a_row = &ad[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &bd[j * k..(j + 1) * k];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    };
    if m >= PAR_ROWS {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| row_op(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_op(i, row);
        }
    }
    Tensor::unchecked(vec![m, n], out)
}

/// `[m,k]^T x [m,n] -> [k,n]`: accumulates row outer products, no
/// transposition.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (m2, n) = (b.rows(), b.cols());
    assert_eq!(m, m2, "matmul_tn outer dimensions differ: {m} vs {m2}");
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &bd[i * n..(i + 1) * n];
        let a_row = &ad[i * k..(i + 1) * k];
        for (l, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::unchecked(vec![k, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::unchecked(vec![n, m], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::unchecked(a.shape().to_vec(), data)
}

pub fn mul_elem(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::unchecked(a.shape().to_vec(), data)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    Tensor::unchecked(a.shape().to_vec(), data)
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::unchecked(a.shape().to_vec(), data)
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

pub fn gelu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| gelu_scalar(x)).collect();
    Tensor::unchecked(a.shape().to_vec(), data)
}

/// Row-wise layer normalization with learned gain/bias. `gamma` and `beta`
/// are `[1, d]`.
pub fn layer_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (m, d) = (x.rows(), x.cols());
    assert_eq!(gamma.len(), d, "layer norm gain width mismatch");
    assert_eq!(beta.len(), d, "layer norm bias width mismatch");
    let g = gamma.data();
    let b = beta.data();
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let out_row = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            out_row[j] = (row[j] - mean) * rstd * g[j] + b[j];
        }
    }
    Tensor::unchecked(vec![m, d], out)
}

/// Softmax over each row restricted to columns `j <= i` (causal attention);
/// masked entries are zero. Input must be square.
pub fn causal_softmax(scores: &Tensor) -> Tensor {
    let n = scores.rows();
    assert_eq!(n, scores.cols(), "causal softmax expects a square matrix");
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = scores.row(i);
        let max = row[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out_row = &mut out[i * n..(i + 1) * n];
        for j in 0..=i {
            let e = (row[j] - max).exp();
            out_row[j] = e;
            sum += e;
        }
        for v in &mut out_row[..=i] {
            *v /= sum;
        }
    }
    Tensor::unchecked(vec![n, n], out)
}

pub fn slice_cols(a: &Tensor, start: usize, width: usize) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    assert!(start + width <= n, "column slice out of range");
    let mut out = Vec::with_capacity(m * width);
    for i in 0..m {
        out.extend_from_slice(&a.row(i)[start..start + width]);
    }
    Tensor::unchecked(vec![m, width], out)
}

pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat of nothing");
    let m = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for p in parts {
            assert_eq!(p.rows(), m, "concat row mismatch");
            out.extend_from_slice(p.row(i));
        }
    }
    Tensor::unchecked(vec![m, total], out)
}

pub fn rows_range(a: &Tensor, start: usize, len: usize) -> Tensor {
    let n = a.cols();
    assert!(start + len <= a.rows(), "row range out of bounds");
    let data = a.data()[start * n..(start + len) * n].to_vec();
    Tensor::unchecked(vec![len, n], data)
}

pub fn select_row(a: &Tensor, row: usize) -> Tensor {
    Tensor::unchecked(vec![1, a.cols()], a.row(row).to_vec())
}

/// Column-wise sum over rows, producing `[1, d]`.
pub fn sum_rows(a: &Tensor) -> Tensor {
    let (m, d) = (a.rows(), a.cols());
    let mut out = vec![0.0; d];
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    Tensor::unchecked(vec![1, d], out)
}

pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

/// Add a `[1, n]` row vector to every row of `[m, n]`.
pub fn add_row_broadcast(a: &Tensor, row: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(row.len(), n, "broadcast row width mismatch");
    let r = row.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        out.extend(a.row(i).iter().zip(r).map(|(x, y)| x + y));
    }
    Tensor::unchecked(vec![m, n], out)
}

/// Fused stable softmax + mean cross-entropy over logit rows. Returns the
/// scalar loss and the softmax probabilities (needed for the backward pass:
/// d logits = (p - onehot) / m).
pub fn softmax_xent_mean(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (m, k) = (logits.rows(), logits.cols());
    assert_eq!(m, labels.len(), "label count mismatch");
    let mut probs = vec![0.0; m * k];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        assert!(label < k, "label out of range");
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let p_row = &mut probs[i * k..(i + 1) * k];
        for j in 0..k {
            let e = (row[j] - max).exp();
            p_row[j] = e;
            sum += e;
        }
        for v in p_row.iter_mut() {
            *v /= sum;
        }
        // -log p[y] in the stable form logsumexp(z) - z[y]
        total += sum.ln() + max - row[label];
    }
    (total / m as f64, Tensor::unchecked(vec![m, k], probs))
}

/// Mean squared error of `[m, 1]` predictions against targets.
pub fn mse_mean(preds: &Tensor, targets: &[f64]) -> f64 {
    let m = preds.rows();
    assert_eq!(preds.cols(), 1, "regression predictions must be [m, 1]");
    assert_eq!(m, targets.len(), "target count mismatch");
    let mut total = 0.0;
    for (p, t) in preds.data().iter().zip(targets) {
        let d = p - t;
        total += d * d;
    }
    total / m as f64
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` per coordinate.
///
/// Evaluates `f` through the plain forward path only, so it stays independent
/// of the recorded-graph backward pass it is used to check.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation while differencing coordinate {i}"
            )));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(Tensor::unchecked(x.shape().to_vec(), grad))
}

/// Relative error with the denominator floored at 1e-6 so that
/// finite-difference rounding noise on near-zero gradients does not register
/// as disagreement.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
