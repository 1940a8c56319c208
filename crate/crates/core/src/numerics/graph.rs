//! Reverse-mode autodiff over a per-forward tape.
//!
//! A `Graph` is built fresh for every forward pass: leaves are either plain
//! inputs or parameter snapshots tagged with a slot id, ops append nodes, and
//! `backward` walks the tape in reverse. Parameter gradients are read back by
//! slot after the sweep. Shapes follow the row-major convention of `Tensor`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch statistics captured by a standardization layer in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Input,
    Param { slot: usize },
    Linear { x: Var, w: Var, b: Var },
    Relu { x: Var },
    MaxPoints { x: Var, argmax: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatPointsGlobal { points: Var, global: Var },
    Reshape { x: Var },
    AddScaled { a: Var, b: Var, scale: f64 },
    Standardize { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Result<Var> {
        ensure_finite(op_name, &data)?;
        self.nodes.push(Node { shape, data, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Copy a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("graph nodes hold validated values")
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Data leaf; gradients are not tracked through it.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.push("input", t.shape().to_vec(), t.data().to_vec(), Op::Input, false)
    }

    /// Parameter leaf; `slot` identifies the parameter to credit gradients to.
    pub fn param(&mut self, slot: usize, t: &Tensor) -> Result<Var> {
        self.push("param", t.shape().to_vec(), t.data().to_vec(), Op::Param { slot }, true)
    }

    /// Affine map along the last axis: `[..., d_in] x [d_in, d_out] + [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (x_shape, w_shape, b_shape) = (self.shape(x), self.shape(w), self.shape(b));
        if w_shape.len() != 2 || b_shape.len() != 1 || w_shape[1] != b_shape[0] {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("weight {:?} / bias {:?}", w_shape, b_shape),
            });
        }
        let d_in = w_shape[0];
        let d_out = w_shape[1];
        if x_shape.is_empty() || *x_shape.last().unwrap() != d_in {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("input {:?} incompatible with weight {:?}", x_shape, w_shape),
            });
        }
        let rows = self.nodes[x.0].data.len() / d_in;
        let mut out_shape = x_shape.to_vec();
        *out_shape.last_mut().unwrap() = d_out;

        let xv = &self.nodes[x.0].data;
        let wv = &self.nodes[w.0].data;
        let bv = &self.nodes[b.0].data;
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            let xr = &xv[r * d_in..(r + 1) * d_in];
            let or = &mut out[r * d_out..(r + 1) * d_out];
            or.copy_from_slice(bv);
            for (i, &xi) in xr.iter().enumerate() {
                let wr = &wv[i * d_out..(i + 1) * d_out];
                for (o, &wij) in or.iter_mut().zip(wr) {
                    *o += xi * wij;
                }
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        self.push("linear", out_shape, out, Op::Linear { x, w, b }, needs)
    }

    /// Elementwise `max(0, x)`. Subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs_grad(x);
        self.push("relu", shape, data, Op::Relu { x }, needs)
    }

    /// Feature-wise maximum over the point axis: `[b, k, d] -> [b, d]`.
    ///
    /// Returns the argmax point per feature; ties break to the lowest point
    /// index so backward routing is deterministic.
    pub fn max_points(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape {
                op: "max_points",
                detail: format!("expected [b, k, d], got {:?}", shape),
            });
        }
        let (b, k, d) = (shape[0], shape[1], shape[2]);
        if k == 0 {
            return Err(Error::EmptyCloud);
        }
        let xv = &self.nodes[x.0].data;
        let mut out = vec![0.0; b * d];
        let mut arg = vec![0usize; b * d];
        for bi in 0..b {
            for di in 0..d {
                let mut best = xv[bi * k * d + di];
                let mut best_k = 0usize;
                for ki in 1..k {
                    let v = xv[(bi * k + ki) * d + di];
                    if v > best {
                        best = v;
                        best_k = ki;
                    }
                }
                out[bi * d + di] = best;
                arg[bi * d + di] = best_k;
            }
        }
        let needs = self.needs_grad(x);
        let v = self.push("max_points", vec![b, d], out, Op::MaxPoints { x, argmax: arg.clone() }, needs)?;
        Ok((v, arg))
    }

    /// Mean of `-log softmax(logits)[target]` over rows; max-subtraction keeps
    /// the exponentials in range.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                detail: format!("expected [n, c], got {:?}", shape),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if n == 0 {
            return Err(Error::Shape { op: "softmax_cross_entropy", detail: "empty batch".into() });
        }
        if targets.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                detail: format!("{} logit rows vs {} targets", n, targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelRange { label: bad, bound: c });
        }
        let lv = &self.nodes[logits.0].data;
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * c + j] = e;
                sum += e;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p /= sum;
            }
            total += sum.ln() - (row[targets[r]] - m);
        }
        total /= n as f64;
        let needs = self.needs_grad(logits);
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![total],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            needs,
        )
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Identity when `rate == 0` or not training.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", rate)));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].data.len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0].data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs_grad(x);
        self.push("dropout", shape, data, Op::Dropout { x, mask }, needs)
    }

    /// Broadcast a per-sample global vector onto every point and concatenate:
    /// `[b, k, d1] ++ [b, d2] -> [b, k, d1 + d2]`.
    pub fn concat_points_global(&mut self, points: Var, global: Var) -> Result<Var> {
        let ps = self.shape(points).to_vec();
        let gs = self.shape(global).to_vec();
        if ps.len() != 3 || gs.len() != 2 || ps[0] != gs[0] {
            return Err(Error::Shape {
                op: "concat_points_global",
                detail: format!("points {:?} vs global {:?}", ps, gs),
            });
        }
        let (b, k, d1) = (ps[0], ps[1], ps[2]);
        let d2 = gs[1];
        let pv = &self.nodes[points.0].data;
        let gv = &self.nodes[global.0].data;
        let mut out = vec![0.0; b * k * (d1 + d2)];
        for bi in 0..b {
            for ki in 0..k {
                let dst = (bi * k + ki) * (d1 + d2);
                out[dst..dst + d1].copy_from_slice(&pv[(bi * k + ki) * d1..(bi * k + ki + 1) * d1]);
                out[dst + d1..dst + d1 + d2].copy_from_slice(&gv[bi * d2..(bi + 1) * d2]);
            }
        }
        let needs = self.needs_grad(points) || self.needs_grad(global);
        self.push(
            "concat_points_global",
            vec![b, k, d1 + d2],
            out,
            Op::ConcatPointsGlobal { points, global },
            needs,
        )
    }

    pub fn reshape(&mut self, x: Var, new_shape: Vec<usize>) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(x), new_shape),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let needs = self.needs_grad(x);
        self.push("reshape", new_shape, data, Op::Reshape { x }, needs)
    }

    /// Elementwise `a + scale * b` (shapes must match).
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add_scaled",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + scale * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push("add_scaled", shape, data, Op::AddScaled { a, b, scale }, needs)
    }

    /// Per-feature standardization over all leading axes, with learnable
    /// scale/shift. `stats`: `None` computes batch statistics (training) and
    /// reports them back; `Some((mean, var))` uses frozen running statistics.
    pub fn standardize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(Error::Shape { op: "standardize", detail: "scalar input".into() })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape {
                op: "standardize",
                detail: format!("gamma/beta must be [{}]", d),
            });
        }
        let rows = self.nodes[x.0].data.len() / d;
        if rows == 0 {
            return Err(Error::Shape { op: "standardize", detail: "no rows".into() });
        }
        const EPS: f64 = 1e-5;
        let (mean, var, batch_stats) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let xv = &self.nodes[x.0].data;
                let mut mean = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        mean[j] += xv[r * d + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        let c = xv[r * d + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + EPS).sqrt()).collect();
        let xv = &self.nodes[x.0].data;
        let gv = &self.nodes[gamma.0].data;
        let bv = &self.nodes[beta.0].data;
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] = gv[j] * (xv[r * d + j] - mean[j]) * inv_std[j] + bv[j];
            }
        }
        let reported = batch_stats.then(|| BatchStats { mean: mean.clone(), var: var.clone() });
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let v = self.push(
            "standardize",
            shape,
            out,
            Op::Standardize { x, gamma, beta, mean, inv_std, batch_stats },
            needs,
        )?;
        Ok((v, reported))
    }

    /// Reverse sweep from a scalar loss; gradients land on every node that
    /// needs them and can then be read via `grad` / `param_grads`.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = self.nodes.iter().map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            ensure_finite(op_name(&self.nodes[i].op), &g)?;
            match &self.nodes[i].op {
                Op::Input | Op::Param { .. } => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let d_in = self.nodes[w.0].shape[0];
                    let d_out = self.nodes[w.0].shape[1];
                    let rows = self.nodes[x.0].data.len() / d_in;
                    if self.nodes[x.0].needs_grad {
                        let wv = &self.nodes[w.0].data;
                        let mut dx = vec![0.0; rows * d_in];
                        for r in 0..rows {
                            let gr = &g[r * d_out..(r + 1) * d_out];
                            let dxr = &mut dx[r * d_in..(r + 1) * d_in];
                            for (i_in, dxi) in dxr.iter_mut().enumerate() {
                                let wr = &wv[i_in * d_out..(i_in + 1) * d_out];
                                *dxi = gr.iter().zip(wr).map(|(&a, &b)| a * b).sum();
                            }
                        }
                        accumulate(&mut grads, x, &dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let xv = &self.nodes[x.0].data;
                        let mut dw = vec![0.0; d_in * d_out];
                        for r in 0..rows {
                            let xr = &xv[r * d_in..(r + 1) * d_in];
                            let gr = &g[r * d_out..(r + 1) * d_out];
                            for (i_in, &xi) in xr.iter().enumerate() {
                                let dwr = &mut dw[i_in * d_out..(i_in + 1) * d_out];
                                for (dwij, &gj) in dwr.iter_mut().zip(gr) {
                                    *dwij += xi * gj;
                                }
                            }
                        }
                        accumulate(&mut grads, w, &dw);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut db = vec![0.0; d_out];
                        for r in 0..rows {
                            for (dbj, &gj) in db.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                                *dbj += gj;
                            }
                        }
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    if self.nodes[x.0].needs_grad {
                        let dx: Vec<f64> = self.nodes[x.0]
                            .data
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, x, &dx);
                    }
                }
                Op::MaxPoints { x, argmax } => {
                    let x = *x;
                    if self.nodes[x.0].needs_grad {
                        let [b, k, d] = [self.nodes[x.0].shape[0], self.nodes[x.0].shape[1], self.nodes[x.0].shape[2]];
                        let mut dx = vec![0.0; b * k * d];
                        for bi in 0..b {
                            for di in 0..d {
                                let ki = argmax[bi * d + di];
                                dx[(bi * k + ki) * d + di] += g[bi * d + di];
                            }
                        }
                        accumulate(&mut grads, x, &dx);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let logits = *logits;
                    if self.nodes[logits.0].needs_grad {
                        let n = targets.len();
                        let c = self.nodes[logits.0].shape[1];
                        let scale = g[0] / n as f64;
                        let mut dl = probs.clone();
                        for (r, &t) in targets.iter().enumerate() {
                            dl[r * c + t] -= 1.0;
                        }
                        dl.iter_mut().for_each(|v| *v *= scale);
                        accumulate(&mut grads, logits, &dl);
                    }
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    if self.nodes[x.0].needs_grad {
                        let dx: Vec<f64> = g.iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                        accumulate(&mut grads, x, &dx);
                    }
                }
                Op::ConcatPointsGlobal { points, global } => {
                    let (points, global) = (*points, *global);
                    let d1 = self.nodes[points.0].shape[2];
                    let d2 = self.nodes[global.0].shape[1];
                    let b = self.nodes[points.0].shape[0];
                    let k = self.nodes[points.0].shape[1];
                    if self.nodes[points.0].needs_grad {
                        let mut dp = vec![0.0; b * k * d1];
                        for bi in 0..b {
                            for ki in 0..k {
                                let src = (bi * k + ki) * (d1 + d2);
                                dp[(bi * k + ki) * d1..(bi * k + ki + 1) * d1]
                                    .copy_from_slice(&g[src..src + d1]);
                            }
                        }
                        accumulate(&mut grads, points, &dp);
                    }
                    if self.nodes[global.0].needs_grad {
                        let mut dg = vec![0.0; b * d2];
                        for bi in 0..b {
                            for ki in 0..k {
                                let src = (bi * k + ki) * (d1 + d2) + d1;
                                for j in 0..d2 {
                                    dg[bi * d2 + j] += g[src + j];
                                }
                            }
                        }
                        accumulate(&mut grads, global, &dg);
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    if self.nodes[x.0].needs_grad {
                        accumulate(&mut grads, x, &g);
                    }
                }
                Op::AddScaled { a, b, scale } => {
                    let (a, b, scale) = (*a, *b, *scale);
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, a, &g);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db: Vec<f64> = g.iter().map(|&v| v * scale).collect();
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::Standardize { x, gamma, beta, mean, inv_std, batch_stats } => {
                    let (x, gamma, beta, batch_stats) = (*x, *gamma, *beta, *batch_stats);
                    let d = mean.len();
                    let rows = self.nodes[x.0].data.len() / d;
                    let xv = &self.nodes[x.0].data;
                    let gv = &self.nodes[gamma.0].data;
                    // xhat is cheap to recompute from the saved statistics.
                    let mean = mean.clone();
                    let inv_std = inv_std.clone();
                    let xhat = |r: usize, j: usize| (xv[r * d + j] - mean[j]) * inv_std[j];
                    if self.nodes[gamma.0].needs_grad {
                        let mut dgm = vec![0.0; d];
                        for r in 0..rows {
                            for (j, dg) in dgm.iter_mut().enumerate() {
                                *dg += g[r * d + j] * xhat(r, j);
                            }
                        }
                        accumulate(&mut grads, gamma, &dgm);
                    }
                    if self.nodes[beta.0].needs_grad {
                        let mut dbt = vec![0.0; d];
                        for r in 0..rows {
                            for (j, db) in dbt.iter_mut().enumerate() {
                                *db += g[r * d + j];
                            }
                        }
                        accumulate(&mut grads, beta, &dbt);
                    }
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![0.0; rows * d];
                        if batch_stats {
                            // Standard batch-norm backward through the batch statistics.
                            let n = rows as f64;
                            let mut sum_dxhat = vec![0.0; d];
                            let mut sum_dxhat_xhat = vec![0.0; d];
                            for r in 0..rows {
                                for j in 0..d {
                                    let dxh = g[r * d + j] * gv[j];
                                    sum_dxhat[j] += dxh;
                                    sum_dxhat_xhat[j] += dxh * xhat(r, j);
                                }
                            }
                            for r in 0..rows {
                                for j in 0..d {
                                    let dxh = g[r * d + j] * gv[j];
                                    dx[r * d + j] = inv_std[j] / n
                                        * (n * dxh - sum_dxhat[j] - xhat(r, j) * sum_dxhat_xhat[j]);
                                }
                            }
                        } else {
                            for r in 0..rows {
                                for j in 0..d {
                                    dx[r * d + j] = g[r * d + j] * gv[j] * inv_std[j];
                                }
                            }
                        }
                        accumulate(&mut grads, x, &dx);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Run backward and return `(slot, grad)` for every parameter leaf.
    pub fn backward_param_grads(&self, loss: Var) -> Result<Vec<(usize, Vec<f64>)>> {
        let grads = self.backward(loss)?;
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { slot } = node.op {
                if let Some(g) = &grads[i] {
                    out.push((slot, g.clone()));
                }
            }
        }
        Ok(out)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param { .. } => "param",
        Op::Linear { .. } => "linear",
        Op::Relu { .. } => "relu",
        Op::MaxPoints { .. } => "max_points",
        Op::CrossEntropy { .. } => "softmax_cross_entropy",
        Op::Dropout { .. } => "dropout",
        Op::ConcatPointsGlobal { .. } => "concat_points_global",
        Op::Reshape { .. } => "reshape",
        Op::AddScaled { .. } => "add_scaled",
        Op::Standardize { .. } => "standardize",
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot => *slot = Some(delta.to_vec()),
    }
}
