//! Recorded computation graphs with reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in topological
//! order; [`Tape::backward`] replays the record in reverse, accumulating
//! vector-Jacobian products into the gradient slots of the recorded tensors.
//! Tensors whose `requires_grad` flag is false never receive a gradient, and
//! gradients do not propagate through them — this is what routes updates away
//! from frozen layers.
//!
//! Forward values are computed by the same kernels as the plain inference
//! path, so a recorded forward pass is bitwise identical to an unrecorded
//! one.

use crate::error::{Error, Result};
use crate::numerics::functions as k;
use crate::numerics::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    MulElem(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    CausalSoftmax(usize),
    SliceCols {
        x: usize,
        start: usize,
        width: usize,
    },
    ConcatCols(Vec<usize>),
    SelectRow {
        x: usize,
        row: usize,
    },
    SumRows(usize),
    SumAll(usize),
    AddRowBroadcast {
        x: usize,
        row: usize,
    },
    SoftmaxXentMean {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
    MseMean {
        preds: usize,
        targets: Vec<f64>,
    },
    MeanOf(Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward pass. Single-writer: a training step owns its tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Record an input tensor. Its `requires_grad` flag decides whether the
    /// backward pass will populate its gradient slot.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward target with respect to `v`, if one was
    /// accumulated. Frozen tensors always return `None`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    // -- recorded operations -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = k::add(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Add(a.0, b.0), needs)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let value = k::mul_elem(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::MulElem(a.0, b.0), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = k::scale(&self.nodes[a.0].value, c);
        let needs = self.needs(a.0);
        self.push(value, Op::Scale(a.0, c), needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = k::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(value, Op::Matmul(a.0, b.0), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = k::transpose(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::Transpose(a.0), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = k::relu(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::Relu(a.0), needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = k::gelu(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::Gelu(a.0), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let value = k::layer_norm_rows(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            eps,
        );
        let needs = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            needs,
        )
    }

    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let value = k::causal_softmax(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::CausalSoftmax(a.0), needs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = k::slice_cols(&self.nodes[a.0].value, start, width);
        let needs = self.needs(a.0);
        self.push(
            value,
            Op::SliceCols {
                x: a.0,
                start,
                width,
            },
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = k::concat_cols(&tensors);
        let needs = parts.iter().any(|v| self.needs(v.0));
        self.push(value, Op::ConcatCols(parts.iter().map(|v| v.0).collect()), needs)
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let value = k::select_row(&self.nodes[a.0].value, row);
        let needs = self.needs(a.0);
        self.push(value, Op::SelectRow { x: a.0, row }, needs)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = k::sum_rows(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::SumRows(a.0), needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = k::sum_all(&self.nodes[a.0].value);
        let needs = self.needs(a.0);
        self.push(value, Op::SumAll(a.0), needs)
    }

    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let value = k::add_row_broadcast(&self.nodes[a.0].value, &self.nodes[row.0].value);
        let needs = self.needs(a.0) || self.needs(row.0);
        self.push(value, Op::AddRowBroadcast { x: a.0, row: row.0 }, needs)
    }

    /// Mean softmax cross-entropy of logit rows against labels. The softmax
    /// probabilities are retained for the backward pass.
    pub fn softmax_xent_mean(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (loss, probs) = k::softmax_xent_mean(&self.nodes[logits.0].value, labels);
        let needs = self.needs(logits.0);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXentMean {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        )
    }

    /// Mean squared error of `[m, 1]` predictions against scalar targets.
    pub fn mse_mean(&mut self, preds: Var, targets: &[f64]) -> Var {
        let loss = k::mse_mean(&self.nodes[preds.0].value, targets);
        let needs = self.needs(preds.0);
        self.push(
            Tensor::scalar(loss),
            Op::MseMean {
                preds: preds.0,
                targets: targets.to_vec(),
            },
            needs,
        )
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of nothing");
        let total: f64 = parts
            .iter()
            .map(|v| self.nodes[v.0].value.scalar_value())
            .sum();
        let needs = parts.iter().any(|v| self.needs(v.0));
        self.push(
            Tensor::scalar(total / parts.len() as f64),
            Op::MeanOf(parts.iter().map(|v| v.0).collect()),
            needs,
        )
    }

    // -- backward ------------------------------------------------------------

    /// Populate gradient slots of every grad-requiring tensor reachable from
    /// `loss`, which must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::ContractViolation(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            // Nothing on the tape requires gradients; a no-op is correct.
            return Ok(());
        }
        self.nodes[loss.0].value.grad_mut_or_init()[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].value.grad().is_none() {
                continue;
            }
            self.step_backward(id);
        }
        Ok(())
    }

    /// Propagate the gradient of node `id` into its inputs.
    fn step_backward(&mut self, id: usize) {
        // Move the upstream gradient out so the borrow checker allows
        // accumulating into other (strictly earlier) nodes; it is restored
        // at the end so leaf gradients stay readable.
        let mut upstream = self.nodes[id].value.take_grad().unwrap();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &upstream);
                self.accumulate(b, &upstream);
            }
            Op::MulElem(a, b) => {
                let (a, b) = (*a, *b);
                let da: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[b].value.data())
                    .map(|(g, v)| g * v)
                    .collect();
                let db: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(g, v)| g * v)
                    .collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let da: Vec<f64> = upstream.iter().map(|g| g * c).collect();
                self.accumulate(a, &da);
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, n) = (self.nodes[id].value.rows(), self.nodes[id].value.cols());
                let dc = Tensor::unchecked(vec![m, n], upstream);
                if self.needs(a) {
                    let da = k::matmul_nt(&dc, &self.nodes[b].value);
                    self.accumulate(a, da.data());
                }
                if self.needs(b) {
                    let db = k::matmul_tn(&self.nodes[a].value, &dc);
                    self.accumulate(b, db.data());
                }
                upstream = dc.into_data();
            }
            Op::Transpose(a) => {
                let a = *a;
                let (m, n) = (self.nodes[id].value.rows(), self.nodes[id].value.cols());
                let dc = Tensor::unchecked(vec![m, n], upstream);
                let da = k::transpose(&dc);
                self.accumulate(a, da.data());
                upstream = dc.into_data();
            }
            Op::Relu(a) => {
                let a = *a;
                let da: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Gelu(a) => {
                let a = *a;
                let da: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(g, &x)| g * k::gelu_derivative(x))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let (m, d) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                let g = self.nodes[gamma].value.data().to_vec();
                let mut dx = vec![0.0; m * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..m {
                    let row = self.nodes[x].value.row(i);
                    let dy = &upstream[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    // dyh = dy * gamma; dx = rstd*(dyh - mean(dyh) - xhat*mean(dyh*xhat))
                    let mut mean_dyh = 0.0;
                    let mut mean_dyh_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let dyh = dy[j] * g[j];
                        mean_dyh += dyh;
                        mean_dyh_xhat += dyh * xhat;
                        dgamma[j] += dy[j] * xhat;
                        dbeta[j] += dy[j];
                    }
                    mean_dyh /= d as f64;
                    mean_dyh_xhat /= d as f64;
                    let dx_row = &mut dx[i * d..(i + 1) * d];
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let dyh = dy[j] * g[j];
                        dx_row[j] = rstd * (dyh - mean_dyh - xhat * mean_dyh_xhat);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::CausalSoftmax(a) => {
                let a = *a;
                let n = self.nodes[id].value.rows();
                let mut da = vec![0.0; n * n];
                for i in 0..n {
                    let p = self.nodes[id].value.row(i);
                    let dp = &upstream[i * n..(i + 1) * n];
                    let dot: f64 = (0..=i).map(|j| dp[j] * p[j]).sum();
                    let da_row = &mut da[i * n..(i + 1) * n];
                    for j in 0..=i {
                        da_row[j] = p[j] * (dp[j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::SliceCols { x, start, width } => {
                let (x, start, width) = (*x, *start, *width);
                let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + start + width]
                        .copy_from_slice(&upstream[i * width..(i + 1) * width]);
                }
                self.accumulate(x, &da);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let m = self.nodes[id].value.rows();
                let total = self.nodes[id].value.cols();
                let mut offset = 0;
                for part in parts {
                    let w = self.nodes[part].value.cols();
                    if self.needs(part) {
                        let mut dp = vec![0.0; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w].copy_from_slice(
                                &upstream[i * total + offset..i * total + offset + w],
                            );
                        }
                        self.accumulate(part, &dp);
                    }
                    offset += w;
                }
            }
            Op::SelectRow { x, row } => {
                let (x, row) = (*x, *row);
                let (m, d) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                let mut da = vec![0.0; m * d];
                da[row * d..(row + 1) * d].copy_from_slice(&upstream);
                self.accumulate(x, &da);
            }
            Op::SumRows(a) => {
                let a = *a;
                let (m, d) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                let mut da = vec![0.0; m * d];
                for i in 0..m {
                    da[i * d..(i + 1) * d].copy_from_slice(&upstream);
                }
                self.accumulate(a, &da);
            }
            Op::SumAll(a) => {
                let a = *a;
                let da = vec![upstream[0]; self.nodes[a].value.len()];
                self.accumulate(a, &da);
            }
            Op::AddRowBroadcast { x, row } => {
                let (x, row) = (*x, *row);
                let (m, n) = (self.nodes[x].value.rows(), self.nodes[x].value.cols());
                self.accumulate(x, &upstream);
                if self.needs(row) {
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += upstream[i * n + j];
                        }
                    }
                    self.accumulate(row, &dr);
                }
            }
            Op::SoftmaxXentMean {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let labels = labels.clone();
                let m = probs.rows();
                let kk = probs.cols();
                let g = upstream[0];
                let mut dz = probs.data().to_vec();
                for (i, &label) in labels.iter().enumerate() {
                    dz[i * kk + label] -= 1.0;
                }
                let scale = g / m as f64;
                for v in &mut dz {
                    *v *= scale;
                }
                self.accumulate(logits, &dz);
            }
            Op::MseMean { preds, targets } => {
                let preds = *preds;
                let targets = targets.clone();
                let m = targets.len();
                let g = upstream[0];
                let dp: Vec<f64> = self.nodes[preds]
                    .value
                    .data()
                    .iter()
                    .zip(&targets)
                    .map(|(p, t)| g * 2.0 * (p - t) / m as f64)
                    .collect();
                self.accumulate(preds, &dp);
            }
            Op::MeanOf(parts) => {
                let parts = parts.clone();
                let share = upstream[0] / parts.len() as f64;
                for part in parts {
                    self.accumulate(part, &[share]);
                }
            }
        }
        self.nodes[id].value.put_grad(upstream);
    }

    fn accumulate(&mut self, id: usize, contribution: &[f64]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let grad = self.nodes[id].value.grad_mut_or_init();
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }
}
