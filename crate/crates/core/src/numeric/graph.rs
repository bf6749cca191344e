//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! [`Gradients`] for every node that (transitively) depends on a leaf with
//! `requires_grad` set. Graphs are cheap; build a fresh one per step.
//!
//! ```
//! use dmn_core::numeric::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::vector(&[1.0, -2.0]).with_requires_grad(true));
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0]);
//! ```

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{contract, ensure, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Concat { axis: usize, inputs: Vec<Var> },
    Narrow { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Conv2d { x: Var, kernel: Var, bias: Var, geom: ConvGeometry },
    Upsample2x(Var),
    GatherCols { table: Var, ids: Vec<usize> },
    BroadcastCols(Var),
    Sum(Var),
    Mean(Var),
    BceLogits { logits: Var, target: Vec<f64>, pos_weight: f64 },
    BceProb { probs: Var, target: Vec<f64>, pos_weight: f64, clip: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn check_binary_target(target: &Tensor) -> Result<()> {
    ensure!(
        target.data().iter().all(|&v| v == 0.0 || v == 1.0),
        "ground-truth mask must be binary (0/1)"
    );
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_from(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(Tensor::from_parts(shape, data), op, needs)
    }

    /// Inserts a leaf; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let mut value = t;
        value.zero_grad();
        self.push(value, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = t.with_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{what}: operand shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_from(shape, data, op, &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_from(shape, data, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `scale * x + shift`, elementwise.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::ScaleShift(x, scale), |v| scale * v + shift)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.scale_shift(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `[m×k] · [k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure!(
            sa.len() == 2 && sb.len() == 2,
            "matmul expects matrices, got {sa:?} and {sb:?}"
        );
        ensure!(
            sa[1] == sb[0],
            "matmul inner dimension mismatch: {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push_from(vec![m, n], data, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds bias `b[d]` along the leading axis of `x[d, ...]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        ensure!(
            sb.len() == 1 && !sx.is_empty() && sx[0] == sb[0],
            "bias of shape {sb:?} does not match leading axis of {sx:?}"
        );
        let inner: usize = sx[1..].iter().product();
        let bias = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i / inner])
            .collect();
        let shape = sx.to_vec();
        Ok(self.push_from(shape, data, Op::AddBias(x, b), &[x, b]))
    }

    /// `W·x + b` for `x` of shape `[d_in]` or `[d_in, n]`, `W[d_out, d_in]`, `b[d_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        match sx.len() {
            1 => {
                let col = self.reshape(x, &[sx[0], 1])?;
                let y = self.matmul(w, col)?;
                let y = self.add_bias(y, b)?;
                let d_out = self.shape(y)[0];
                self.reshape(y, &[d_out])
            }
            2 => {
                let y = self.matmul(w, x)?;
                self.add_bias(y, b)
            }
            _ => Err(contract!("affine input must be a vector or matrix, got {sx:?}")),
        }
    }

    pub fn concat(&mut self, axis: usize, inputs: &[Var]) -> Result<Var> {
        ensure!(!inputs.is_empty(), "concat of zero tensors");
        let first = self.shape(inputs[0]).to_vec();
        ensure!(
            axis < first.len(),
            "concat axis {axis} out of range for rank {}",
            first.len()
        );
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            ensure!(
                s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b),
                "concat along axis {axis}: shape {s:?} incompatible with {first:?}"
            );
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, inner) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        Ok(self.push_from(
            shape,
            data,
            Op::Concat {
                axis,
                inputs: inputs.to_vec(),
            },
            inputs,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        ensure!(axis < sx.len(), "narrow axis {axis} out of range for {sx:?}");
        ensure!(
            len > 0 && start + len <= sx[axis],
            "narrow [{start}, {}) exceeds extent {} of axis {axis}",
            start + len,
            sx[axis]
        );
        let (outer, inner) = outer_inner(&sx, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sx[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        Ok(self.push_from(
            shape,
            data,
            Op::Narrow {
                input: x,
                axis,
                start,
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        ensure!(
            n == self.value(x).len() && shape.iter().all(|&d| d > 0),
            "cannot reshape {:?} into {shape:?}",
            self.shape(x)
        );
        let data = self.data(x).to_vec();
        Ok(self.push_from(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// 2-D convolution of `x[C_in, H, W]` with `kernel[C_out, C_in, kh, kw]`,
    /// zero padding and a per-output-channel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        ensure!(sx.len() == 3, "conv2d input must be C×H×W, got {sx:?}");
        ensure!(sk.len() == 4, "conv2d kernel must be O×C×kh×kw, got {sk:?}");
        ensure!(
            sk[1] == sx[0],
            "conv2d input channels: kernel expects {} but input has {}",
            sk[1],
            sx[0]
        );
        ensure!(stride >= 1, "conv2d stride must be at least 1");
        ensure!(
            sx[1] + 2 * pad >= sk[2],
            "conv2d height: H + 2*pad = {} is smaller than kernel height {}",
            sx[1] + 2 * pad,
            sk[2]
        );
        ensure!(
            sx[2] + 2 * pad >= sk[3],
            "conv2d width: W + 2*pad = {} is smaller than kernel width {}",
            sx[2] + 2 * pad,
            sk[3]
        );
        ensure!(
            self.shape(bias) == [sk[0]],
            "conv2d bias shape {:?} does not match {} output channels",
            self.shape(bias),
            sk[0]
        );
        let geom = ConvGeometry {
            in_channels: sx[0],
            height: sx[1],
            width: sx[2],
            kernel_h: sk[2],
            kernel_w: sk[3],
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = kernels::im2col(self.data(x), &geom);
        let mut out = kernels::matmul(self.data(kernel), &cols, sk[0], geom.patch_len(), oh * ow);
        let b = self.data(bias);
        for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[o]);
        }
        Ok(self.push_from(
            vec![sk[0], oh, ow],
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            },
            &[x, kernel, bias],
        ))
    }

    /// Bilinear ×2 upsampling of a `C×H×W` map (half-pixel centres, edge clamp).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        ensure!(s.len() == 3, "upsample expects C×H×W, got {s:?}");
        let data = kernels::upsample2x(self.data(x), s[0], s[1], s[2]);
        Ok(self.push_from(vec![s[0], 2 * s[1], 2 * s[2]], data, Op::Upsample2x(x), &[x]))
    }

    /// Looks up rows of `table[V, d]`, returning them as the columns of a `[d, T]` matrix.
    pub fn gather_cols(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        ensure!(s.len() == 2, "embedding table must be V×d, got {s:?}");
        ensure!(!ids.is_empty(), "empty id sequence");
        let (v, d) = (s[0], s[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(contract!("token id {bad} out of range for vocabulary of {v}"));
        }
        let t = ids.len();
        let src = self.data(table);
        let mut data = vec![0.0; d * t];
        for (col, &id) in ids.iter().enumerate() {
            for k in 0..d {
                data[k * t + col] = src[id * d + k];
            }
        }
        Ok(self.push_from(
            vec![d, t],
            data,
            Op::GatherCols {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Tiles a `[d]` or `[d, 1]` vector into `[d, n]`.
    pub fn broadcast_cols(&mut self, v: Var, n: usize) -> Result<Var> {
        let s = self.shape(v);
        ensure!(
            s.len() == 1 || (s.len() == 2 && s[1] == 1),
            "broadcast_cols expects a vector, got {s:?}"
        );
        ensure!(n > 0, "broadcast to zero columns");
        let d = s[0];
        let src = self.data(v);
        let data = (0..d).flat_map(|k| std::iter::repeat_n(src[k], n)).collect();
        Ok(self.push_from(vec![d, n], data, Op::BroadcastCols(v), &[v]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        self.push_from(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s: f64 = self.data(x).iter().sum::<f64>() / n;
        self.push_from(vec![1], vec![s], Op::Mean(x), &[x])
    }

    fn check_target(&self, pred: Var, target: &Tensor) -> Result<()> {
        ensure!(
            self.shape(pred) == target.shape(),
            "prediction resolution {:?} differs from ground truth {:?}; downsample the ground-truth mask to the output resolution for low-resolution training",
            self.shape(pred),
            target.shape()
        );
        check_binary_target(target)
    }

    /// Mean weighted binary cross-entropy computed from logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor, pos_weight: f64) -> Result<Var> {
        self.check_target(logits, target)?;
        let n = target.len() as f64;
        let loss: f64 = self
            .data(logits)
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| pos_weight * y * kernels::softplus(-z) + (1.0 - y) * kernels::softplus(z))
            .sum::<f64>()
            / n;
        Ok(self.push_from(
            vec![1],
            vec![loss],
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
                pos_weight,
            },
            &[logits],
        ))
    }

    /// Mean weighted binary cross-entropy on probabilities clipped to `[clip, 1 - clip]`.
    pub fn bce_prob(&mut self, probs: Var, target: &Tensor, pos_weight: f64, clip: f64) -> Result<Var> {
        self.check_target(probs, target)?;
        let n = target.len() as f64;
        let loss: f64 = self
            .data(probs)
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.clamp(clip, 1.0 - clip);
                -(pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push_from(
            vec![1],
            vec![loss],
            Op::BceProb {
                probs,
                target: target.data().to_vec(),
                pos_weight,
                clip,
            },
            &[probs],
        ))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        ensure!(
            self.value(root).len() == 1,
            "backward requires a scalar root, got shape {:?}",
            self.shape(root)
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if !self.needs(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        let mut send = |v: Var, g: &[f64]| {
            if self.needs(v) {
                accumulate(&mut grads[v.0], g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, gy);
                send(*b, gy);
            }
            Op::Sub(a, b) => {
                send(*a, gy);
                let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                send(*b, &neg);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if self.needs(*a) {
                    let g: Vec<f64> = gy.iter().zip(db).map(|(g, v)| g * v).collect();
                    send(*a, &g);
                }
                if self.needs(*b) {
                    let g: Vec<f64> = gy.iter().zip(da).map(|(g, v)| g * v).collect();
                    send(*b, &g);
                }
            }
            Op::ScaleShift(x, scale) => {
                let g: Vec<f64> = gy.iter().map(|g| g * scale).collect();
                send(*x, &g);
            }
            Op::Sigmoid(x) => {
                let g: Vec<f64> = gy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                send(*x, &g);
            }
            Op::Tanh(x) => {
                let g: Vec<f64> = gy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                send(*x, &g);
            }
            Op::Relu(x) => {
                let g: Vec<f64> = gy
                    .iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                send(*x, &g);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let g = kernels::matmul_nt(gy, self.data(*b), m, n, k);
                    send(*a, &g);
                }
                if self.needs(*b) {
                    let g = kernels::matmul_tn(self.data(*a), gy, m, k, n);
                    send(*b, &g);
                }
            }
            Op::AddBias(x, b) => {
                send(*x, gy);
                if self.needs(*b) {
                    let d = self.shape(*b)[0];
                    let inner = gy.len() / d;
                    let g: Vec<f64> = gy.chunks(inner).map(|c| c.iter().sum()).collect();
                    send(*b, &g);
                }
            }
            Op::Concat { axis, inputs } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    if self.needs(v) {
                        let mut g = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let base = o * total + offset;
                            g.extend_from_slice(&gy[base..base + block]);
                        }
                        send(v, &g);
                    }
                    offset += block;
                }
            }
            Op::Narrow { input, axis, start } => {
                let sx = self.shape(*input);
                let (outer, inner) = outer_inner(sx, *axis);
                let len = node.value.shape()[*axis];
                let mut g = vec![0.0; self.value(*input).len()];
                for o in 0..outer {
                    let dst = (o * sx[*axis] + start) * inner;
                    let src = o * len * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gy[src..src + len * inner]);
                }
                send(*input, &g);
            }
            Op::Reshape(x) => send(*x, gy),
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            } => {
                let out_ch = node.value.shape()[0];
                let spatial = geom.out_h() * geom.out_w();
                if self.needs(*kernel) {
                    let cols = kernels::im2col(self.data(*x), geom);
                    let g = kernels::matmul_nt(gy, &cols, out_ch, spatial, geom.patch_len());
                    send(*kernel, &g);
                }
                if self.needs(*x) {
                    let gcols = kernels::matmul_tn(
                        self.data(*kernel),
                        gy,
                        out_ch,
                        geom.patch_len(),
                        spatial,
                    );
                    let g = kernels::col2im(&gcols, geom);
                    send(*x, &g);
                }
                if self.needs(*bias) {
                    let g: Vec<f64> = gy.chunks(spatial).map(|c| c.iter().sum()).collect();
                    send(*bias, &g);
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let g = kernels::upsample2x_backward(gy, s[0], s[1], s[2]);
                send(*x, &g);
            }
            Op::GatherCols { table, ids } => {
                let s = self.shape(*table);
                let d = s[1];
                let t = ids.len();
                let mut g = vec![0.0; s[0] * d];
                for (col, &id) in ids.iter().enumerate() {
                    for k in 0..d {
                        g[id * d + k] += gy[k * t + col];
                    }
                }
                send(*table, &g);
            }
            Op::BroadcastCols(v) => {
                let n = node.value.shape()[1];
                let g: Vec<f64> = gy.chunks(n).map(|c| c.iter().sum()).collect();
                send(*v, &g);
            }
            Op::Sum(x) => {
                let g = vec![gy[0]; self.value(*x).len()];
                send(*x, &g);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let g = vec![gy[0] / n as f64; n];
                send(*x, &g);
            }
            Op::BceLogits {
                logits,
                target,
                pos_weight,
            } => {
                let n = target.len() as f64;
                let g: Vec<f64> = self
                    .data(*logits)
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| {
                        let s = kernels::sigmoid(z);
                        gy[0] * (pos_weight * t * (s - 1.0) + (1.0 - t) * s) / n
                    })
                    .collect();
                send(*logits, &g);
            }
            Op::BceProb {
                probs,
                target,
                pos_weight,
                clip,
            } => {
                let n = target.len() as f64;
                let g: Vec<f64> = self
                    .data(*probs)
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        if p < *clip || p > 1.0 - clip {
                            return 0.0;
                        }
                        gy[0] * (-pos_weight * t / p + (1.0 - t) / (1.0 - p)) / n
                    })
                    .collect();
                send(*probs, &g);
            }
        }
    }
}
