//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward operator appends a node holding its output value and what it
//! needs for the backward pass. [`Tape::backward`] replays the nodes in exact
//! reverse order and accumulates gradients for every registered parameter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identity of a model parameter; unique within one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm constants and running statistics for one call.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormArgs<'a> {
    pub mode: Mode,
    pub running_mean: &'a [f32],
    pub running_var: &'a [f32],
    pub epsilon: f32,
    pub momentum: f32,
}

/// Running statistics after a train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Reshape(Var),
    Concat(Var, Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
    },
    Scale(Var, f32),
    Add(Var, Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Dense { .. } => "dense",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Concat(..) => "concat",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Scale(..) => "scale",
            Op::Add(..) => "add",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probability clamp floor applied before the log in cross-entropy.
pub const PROB_FLOOR: f32 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
    visited: Vec<Var>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.grads.iter()
    }

    /// Non-leaf nodes in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Name of the operator that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Register a trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
        stride: usize,
    ) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects input N×H×W×C and kernels Kh×Kw×Cin×Cout, got {xs:?} and {ks:?}"
            )));
        }
        if xs[3] != ks[2] {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input {xs:?} has {} channels, kernels {ks:?} expect {}",
                xs[3], ks[2]
            )));
        }
        if bs != [ks[3]] {
            return Err(Error::Shape(format!(
                "conv2d bias {bs:?} does not match {} output channels",
                ks[3]
            )));
        }
        let (h, w, kh, kw) = (xs[1], xs[2], ks[0], ks[1]);
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                (
                    ((ho - 1) * stride + kh).saturating_sub(h),
                    ((wo - 1) * stride + kw).saturating_sub(w),
                )
            }
        };
        if kh > h + pad_h || kw > w + pad_w {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}×{kw} exceeds padded input {}×{}",
                h + pad_h,
                w + pad_w
            )));
        }
        let geom = ConvGeometry {
            n: xs[0],
            h,
            w,
            cin: xs[3],
            kh,
            kw,
            cout: ks[3],
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            ho: (h + pad_h - kh) / stride + 1,
            wo: (w + pad_w - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_parts_unchecked(vec![geom.n, geom.ho, geom.wo, geom.cout], out);
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization over N×H×W (any leading axes).
    ///
    /// Train mode also returns the updated running statistics; the caller
    /// decides whether to store them.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        args: BatchNormArgs<'_>,
    ) -> Result<(Var, Option<RunningStats>)> {
        if !(args.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "batch-norm epsilon must be > 0, got {}",
                args.epsilon
            )));
        }
        let x = self.value(input);
        let c = x.last_dim();
        let m = x.outer_len();
        for (what, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running mean", args.running_mean.len()),
            ("running variance", args.running_var.len()),
        ] {
            if len != c {
                return Err(Error::Shape(format!(
                    "batch-norm {what} has {len} entries for {c} channels"
                )));
            }
        }
        let train = args.mode == Mode::Train;
        let (mean, var, stats) = if train {
            if m < 2 {
                return Err(Error::InvalidArgument(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {m}"
                )));
            }
            let (mean, var) = kernels::channel_moments(x.data(), c);
            let mo = args.momentum;
            let stats = RunningStats {
                mean: args
                    .running_mean
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| mo * r + (1.0 - mo) * b)
                    .collect(),
                var: args
                    .running_var
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| mo * r + (1.0 - mo) * b)
                    .collect(),
            };
            (mean, var, Some(stats))
        } else {
            (args.running_mean.to_vec(), args.running_var.to_vec(), None)
        };
        let inv_std: Vec<f32> = var
            .iter()
            .map(|v| 1.0 / (v + args.epsilon).sqrt())
            .collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.numel());
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        let value = Tensor::from_parts_unchecked(x.shape().to_vec(), out);
        let rg = self.rg(&[input, gamma, beta]);
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn maxpool2d(&mut self, input: Var, pool: usize) -> Result<Var> {
        if pool == 0 {
            return Err(Error::InvalidArgument("pool extent must be >= 1".into()));
        }
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!(
                "maxpool2d expects N×H×W×C, got {s:?}"
            )));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (out, argmax, ho, wo) = kernels::maxpool_forward(x.data(), n, h, w, c, pool);
        let value = Tensor::from_parts_unchecked(vec![n, ho, wo, c], out);
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(format!(
                "dense expects N×F · F×G + G, got input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, f, g) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * g);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        kernels::gemm(
            n,
            f,
            g,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            false,
            1.0,
            &mut out,
        );
        let value = Tensor::from_parts_unchecked(vec![n, g], out);
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        let rg = self.rg(&[input]);
        self.push(value, Op::Relu(input), rg)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    /// N×H×W×C → N×(H·W·C).
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).flatten()?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::concat_last(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Row-wise softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let k = x.last_dim();
        let mut out = Vec::with_capacity(x.numel());
        for r in 0..x.outer_len() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let inv = 1.0 / exps.iter().sum::<f64>();
            out.extend(exps.iter().map(|e| (e * inv) as f32));
        }
        debug_assert_eq!(out.len() % k.max(1), 0);
        let value = Tensor::from_parts_unchecked(x.shape().to_vec(), out);
        let rg = self.rg(&[input]);
        self.push(value, Op::Softmax(input), rg)
    }

    /// Batch-mean cross-entropy of probability rows against one-hot targets.
    pub fn cross_entropy(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.rank() != 2 || targets.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "cross-entropy needs matching N×K probabilities and targets, got {:?} and {:?}",
                p.shape(),
                targets.shape()
            )));
        }
        let n = p.shape()[0];
        let mut idx = Vec::with_capacity(n);
        for r in 0..n {
            let row = targets.row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidArgument(format!(
                    "target row {r} is not one-hot: {row:?}"
                )));
            }
            let sum: f64 = p.row(r).iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!(
                    "probability row {r} sums to {sum}, expected 1"
                )));
            }
            idx.push(row.iter().position(|&v| v == 1.0).unwrap());
        }
        let total: f64 = idx
            .iter()
            .enumerate()
            .map(|(r, &t)| -(p.row(r)[t].clamp(PROB_FLOOR, 1.0) as f64).ln())
            .sum();
        let value = Tensor::scalar((total / n as f64) as f32);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs,
                targets: idx,
            },
            rg,
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| factor * v).collect();
        let value = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        let rg = self.rg(&[input]);
        self.push(value, Op::Scale(input, factor), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add needs equal shapes, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(s as f32), Op::Sum(input), rg)
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    ///
    /// Parameters that do not influence `loss` get all-zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited.push(Var(i));
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for &(id, v) in &self.params {
            let g = match grads.get(v.0).and_then(|g| g.clone()) {
                Some(g) => Tensor::from_parts_unchecked(self.value(v).shape().to_vec(), g),
                None => Tensor::zeros(self.value(v).shape()),
            };
            out.insert(id, g);
        }
        Ok(Gradients {
            grads: out,
            visited,
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    needs(*input),
                );
                if let Some(dx) = cg.input {
                    accumulate(grads, *input, dx);
                }
                if needs(*kernel) {
                    accumulate(grads, *kernel, cg.kernel);
                }
                if needs(*bias) {
                    accumulate(grads, *bias, cg.bias);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let m = (g.len() / c) as f64;
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        dgamma[ch] += (gr[ch] * xr[ch]) as f64;
                        dbeta[ch] += gr[ch] as f64;
                    }
                }
                if needs(*input) {
                    let gam = self.value(*gamma).data();
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            let v = if *train {
                                let corr = (dbeta[ch] + xr[ch] as f64 * dgamma[ch]) / m;
                                scale * (gr[ch] - corr as f32)
                            } else {
                                scale * gr[ch]
                            };
                            dx.push(v);
                        }
                    }
                    accumulate(grads, *input, dx);
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, dgamma.iter().map(|&v| v as f32).collect());
                }
                if needs(*beta) {
                    accumulate(grads, *beta, dbeta.iter().map(|&v| v as f32).collect());
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0f32; self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                accumulate(grads, *input, dx);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let xs = self.value(*input);
                let (n, f) = (xs.shape()[0], xs.shape()[1]);
                let gdim = g.len() / n;
                if needs(*input) {
                    let mut dx = vec![0.0f32; n * f];
                    kernels::gemm(
                        n,
                        gdim,
                        f,
                        g,
                        false,
                        self.value(*weight).data(),
                        true,
                        0.0,
                        &mut dx,
                    );
                    accumulate(grads, *input, dx);
                }
                if needs(*weight) {
                    let mut dw = vec![0.0f32; f * gdim];
                    kernels::gemm(f, n, gdim, xs.data(), true, g, false, 0.0, &mut dw);
                    accumulate(grads, *weight, dw);
                }
                if needs(*bias) {
                    let mut db = vec![0.0f32; gdim];
                    for row in g.chunks(gdim) {
                        for (a, b) in db.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Reshape(input) => accumulate(grads, *input, g.to_vec()),
            Op::Concat(a, b) => {
                let ka = self.value(*a).last_dim();
                let kb = self.value(*b).last_dim();
                let mut ga = Vec::with_capacity(self.value(*a).numel());
                let mut gb = Vec::with_capacity(self.value(*b).numel());
                for row in g.chunks(ka + kb) {
                    ga.extend_from_slice(&row[..ka]);
                    gb.extend_from_slice(&row[ka..]);
                }
                if needs(*a) {
                    accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Softmax(input) => {
                let y = &node.value;
                let k = y.last_dim();
                let mut dx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(k).zip(g.chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| (a * b) as f64).sum();
                    let dot = dot as f32;
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                accumulate(grads, *input, dx);
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let k = p.last_dim();
                let n = targets.len() as f32;
                let mut dp = vec![0.0f32; p.numel()];
                for (r, &t) in targets.iter().enumerate() {
                    let pv = p.row(r)[t];
                    if pv > PROB_FLOOR && pv <= 1.0 {
                        dp[r * k + t] = -g[0] / (n * pv);
                    }
                }
                accumulate(grads, *probs, dp);
            }
            Op::Scale(input, factor) => {
                accumulate(grads, *input, g.iter().map(|v| factor * v).collect());
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sum(input) => {
                let n = self.value(*input).numel();
                accumulate(grads, *input, vec![g[0]; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, delta: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
