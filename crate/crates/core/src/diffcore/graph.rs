//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a flat tape.
//! Nodes are only ever appended, so creation order is a valid topological
//! order and [`Graph::backward`] walks the tape in reverse.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Reshape(Var),
    Gather { src: Var, rows: Vec<usize> },
    RowNorm { src: Var, p: u32 },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    /// Per-row `-w (1 - p_t)^gamma log p_t`; `probs` caches the softmax.
    Focal {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        gamma: f64,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Build once per loss evaluation, then call [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Add the gradient for `v` into `target`'s grad buffer.
    ///
    /// A node that did not influence the loss contributes zeros, so every
    /// trainable tensor ends up with a populated gradient after a step.
    pub fn accumulate(&self, v: Var, target: &mut Tensor) -> Result<()> {
        if !target.requires_grad() {
            return Ok(());
        }
        match self.wrt(v) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.len()]),
        }
    }
}

impl Graph {
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
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record a leaf holding a copy of `t`. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push(value, Op::Leaf, t.requires_grad())
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dim(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, m) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: [{n}, {k}] x [{k2}, {m}] inner extents differ"
            )));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), rg))
    }

    /// `a[n, m] + bias[m]`, bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(a, "add_bias")?;
        if self.shape(bias) != [m] {
            return Err(Error::dim(format!(
                "add_bias: bias shape {:?} does not match width {m}",
                self.shape(bias)
            )));
        }
        let mut out = self.value(a).data().to_vec();
        kernels::add_bias(&mut out, self.value(bias).data());
        let rg = self.needs(&[a, bias]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::AddBias(a, bias), rg))
    }

    /// Elementwise `max(0, x)`; also serves as the hinge `[x]_+`.
    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).data().to_vec();
        kernels::relu(&mut out);
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).data().to_vec();
        kernels::tanh(&mut out);
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Tanh(a), rg)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, c), rg)
    }

    /// Add a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Shift(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(a)
            )));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Reshape(a), rg))
    }

    /// Select rows of a matrix (or elements of a vector), repeats allowed.
    pub fn gather(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (n, width, shape) = match *t.shape() {
            [n] => (n, 1, vec![rows.len()]),
            [n, d] => (n, d, vec![rows.len(), d]),
            ref s => return Err(Error::dim(format!("gather: unsupported shape {s:?}"))),
        };
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(Error::dim(format!("gather: row {r} out of range for {n} rows")));
            }
            out.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let rg = self.needs(&[src]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Gather {
                src,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// L_p norm of each row of `[n, d]`, giving `[n]`.
    pub fn row_norm(&mut self, src: Var, p: u32) -> Result<Var> {
        if p == 0 {
            return Err(Error::contract("L_p norm needs p >= 1"));
        }
        let (n, d) = self.matrix_dims(src, "row_norm")?;
        let data = self.value(src).data();
        let out: Vec<f64> = (0..n)
            .map(|i| kernels::lp_norm(&data[i * d..(i + 1) * d], p))
            .collect();
        let rg = self.needs(&[src]);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::RowNorm { src, p }, rg))
    }

    /// Join 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &v in parts {
            if self.shape(v).len() != 1 {
                return Err(Error::dim(format!(
                    "concat expects vectors, got {:?}",
                    self.shape(v)
                )));
            }
            out.extend_from_slice(self.value(v).data());
        }
        let rg = self.needs(parts);
        let n = out.len();
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = kernels::sum(self.value(a).data());
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Arithmetic mean of all elements. Empty inputs are a contract error.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::contract("mean of an empty set of losses"));
        }
        let s = kernels::sum(self.value(a).data()) / n as f64;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Per-row focal cross-entropy `-w (1 - p_t)^gamma log p_t` over `[n, K]` logits.
    ///
    /// `gamma = 0` is weighted cross-entropy.
    pub fn focal_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: &[f64],
        gamma: f64,
    ) -> Result<Var> {
        let (n, k) = self.matrix_dims(logits, "cross_entropy")?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy: {n} rows but {} labels and {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::contract(format!("label {bad} outside [0, {k})")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::contract(format!("focal gamma must be >= 0, got {gamma}")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let lse = kernels::log_sum_exp(row);
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            let log_pt = row[labels[i]] - lse;
            let pt = probs[i * k + labels[i]];
            out.push(-weights[i] * (1.0 - pt).powf(gamma) * log_pt);
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::from_parts(vec![n], out),
            Op::Focal {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                gamma,
                probs,
            },
            rg,
        ))
    }

    /// Activation state of every hinge and norm on the tape.
    ///
    /// Returns the on/off pattern plus whether any element sits exactly on a
    /// kink (a hinge input of 0 or a norm of a zero vector).
    pub fn kink_pattern(&self) -> (Vec<bool>, bool) {
        let mut pattern = Vec::new();
        let mut on_kink = false;
        for node in &self.nodes {
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Relu(a) => {
                    for &x in self.nodes[a.0].value.data() {
                        pattern.push(x > 0.0);
                        on_kink |= x == 0.0;
                    }
                }
                Op::RowNorm { .. } => {
                    for &x in node.value.data() {
                        pattern.push(x > 0.0);
                        on_kink |= x == 0.0;
                    }
                }
                _ => {}
            }
        }
        (pattern, on_kink)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Intermediate gradients are not part of the public result.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        };

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let m = self.nodes[b.0].value.shape()[1];
                if wants(a) {
                    send(a, kernels::matmul_bt(g, val(b), n, m, k));
                }
                if wants(b) {
                    send(b, kernels::matmul_at(val(a), g, n, k, m));
                }
            }
            &Op::AddBias(a, bias) => {
                if wants(a) {
                    send(a, g.to_vec());
                }
                if wants(bias) {
                    let m = self.nodes[bias.0].value.len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                    send(bias, gb);
                }
            }
            &Op::Relu(a) => {
                let gx = val(a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                send(a, gx);
            }
            &Op::Tanh(a) => {
                let y = node.value.data();
                let gx = y.iter().zip(g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
                send(a, gx);
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    send(a, g.to_vec());
                }
                if wants(b) {
                    send(b, g.to_vec());
                }
            }
            &Op::Sub(a, b) => {
                if wants(a) {
                    send(a, g.to_vec());
                }
                if wants(b) {
                    send(b, g.iter().map(|x| -x).collect());
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    send(a, g.iter().zip(val(b)).map(|(gi, y)| gi * y).collect());
                }
                if wants(b) {
                    send(b, g.iter().zip(val(a)).map(|(gi, x)| gi * x).collect());
                }
            }
            &Op::Scale(a, c) => send(a, g.iter().map(|x| x * c).collect()),
            &Op::Shift(a) | &Op::Reshape(a) => send(a, g.to_vec()),
            Op::Gather { src, rows } => {
                let src_t = &self.nodes[src.0].value;
                let width = if src_t.shape().len() == 2 { src_t.shape()[1] } else { 1 };
                let mut gs = vec![0.0; src_t.len()];
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut gs[r * width..(r + 1) * width];
                    dst.iter_mut()
                        .zip(&g[i * width..(i + 1) * width])
                        .for_each(|(d, x)| *d += x);
                }
                send(*src, gs);
            }
            &Op::RowNorm { src, p } => {
                let x = val(src);
                let d = self.nodes[src.0].value.shape()[1];
                let norms = node.value.data();
                let mut gx = vec![0.0; x.len()];
                for (i, (&norm, &gi)) in norms.iter().zip(g).enumerate() {
                    let row = &x[i * d..(i + 1) * d];
                    let out = &mut gx[i * d..(i + 1) * d];
                    kernels::lp_norm_grad(row, norm, p, gi, out);
                }
                send(src, gx);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let n = self.nodes[v.0].value.len();
                    if wants(v) {
                        send(v, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            &Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                send(a, vec![g[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                send(a, vec![g[0] / n as f64; n]);
            }
            Op::Focal {
                logits,
                labels,
                weights,
                gamma,
                probs,
            } => {
                let k = self.nodes[logits.0].value.shape()[1];
                let z = val(*logits);
                let mut gz = vec![0.0; z.len()];
                for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                    let row = &z[i * k..(i + 1) * k];
                    let p = &probs[i * k..(i + 1) * k];
                    let pt = p[y];
                    let log_pt = row[y] - kernels::log_sum_exp(row);
                    let q = 1.0 - pt;
                    let mut coef = q.powf(*gamma);
                    if *gamma > 0.0 && q > 0.0 {
                        coef -= gamma * pt * q.powf(gamma - 1.0) * log_pt;
                    }
                    coef *= w * g[i];
                    for j in 0..k {
                        let delta = if j == y { 1.0 } else { 0.0 };
                        gz[i * k + j] = coef * (p[j] - delta);
                    }
                }
                send(*logits, gz);
            }
        }
    }
}
