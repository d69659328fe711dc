//! Recording tape for reverse-mode differentiation.
//!
//! Every differentiable op appends one node holding its output value plus
//! whatever the backward pass needs. [`Tape::backward`] walks the nodes in
//! reverse, accumulating gradients into a [`GradStore`]. The walk order and
//! every inner accumulation are fixed, so replaying a tape is bitwise
//! deterministic.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::kernels;
use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const LN_EPS: f64 = 1e-5;

/// Forward/eval switch for stochastic and statistics-bearing ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    node: usize,
}

/// Running mean/variance buffers for one batch-norm site.
///
/// These are model state, not tape state: they persist across steps and are
/// updated in train mode with momentum 0.9 (new = 0.9·old + 0.1·batch).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Concat {
        axis: usize,
        inputs: Vec<usize>,
    },
    Reshape(usize),
    Transpose(usize),
    ReduceSum(usize),
    ReduceMean(usize),
    Matmul(usize, usize),
    SoftmaxMasked {
        x: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
    },
    ChannelBias {
        x: usize,
        b: usize,
    },
    AddRow {
        x: usize,
        b: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        train: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    MaxPoolRows {
        x: usize,
        argmax: Vec<usize>,
    },
    MeanPoolRows(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward pass, keyed by [`Var`].
pub struct GradStore {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    /// Gradient of the loss wrt `v`, or `None` if `v` never influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape_id, self.tape_id, "grad query for a foreign tape");
        self.grads[v.node].as_ref()
    }

    /// Like [`GradStore::get`] but materializes zeros for unreached nodes.
    pub fn grad_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

/// Records a single training/eval step's computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input value and returns its handle.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value)
    }

    /// Current value of a recorded node.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape_id, self.id, "value query for a foreign tape");
        &self.nodes[v.node].value
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape_id != self.id {
            return Err(TensorError::ForeignNode);
        }
        Ok(v.node)
    }

    fn val(&self, node: usize) -> &Tensor {
        &self.nodes[node].value
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape_id: self.id,
            node: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, op_name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push_unchecked(op, value))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(an), self.val(bn));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push(op_name, op(an, bn), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        let data: Vec<f64> = av.data().iter().map(|&x| x + c).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push("add_scalar", Op::AddScalar(an), value)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        let data: Vec<f64> = av.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push("mul_scalar", Op::MulScalar(an, c), value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        let data: Vec<f64> = av.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push("relu", Op::Relu(an), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        let data: Vec<f64> = av.data().iter().map(|&x| stable_sigmoid(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push("sigmoid", Op::Sigmoid(an), value)
    }

    /// Concatenates along `axis`; shapes must agree on every other axis.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: "no inputs".into(),
            });
        }
        let mut nodes = Vec::with_capacity(parts.len());
        for &p in parts {
            nodes.push(self.check(p)?);
        }
        let first = self.val(nodes[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::BadShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for &n in &nodes {
            let s = self.val(n).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &n in &nodes {
            let s = self.val(n).shape();
            let len_i = s[axis];
            let src = self.val(n).data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * len_i * inner;
                data[dst_start..dst_start + len_i * inner]
                    .copy_from_slice(&src[src_start..src_start + len_i * inner]);
            }
            offset += len_i;
        }
        let value = Tensor::new(out_shape, data).expect("computed shape");
        self.push(
            "concat",
            Op::Concat {
                axis,
                inputs: nodes,
            },
            value,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        let expected: usize = shape.iter().product();
        if expected != av.len() {
            return Err(TensorError::BadShape {
                op: "reshape",
                shape,
                reason: format!("incompatible with {} elements", av.len()),
            });
        }
        let value = Tensor::new(shape, av.data().to_vec()).expect("length checked");
        self.push("reshape", Op::Reshape(an), value)
    }

    /// 2D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        if av.shape().len() != 2 {
            return Err(TensorError::BadShape {
                op: "transpose",
                shape: av.shape().to_vec(),
                reason: "expected a 2D tensor".into(),
            });
        }
        let (r, c) = (av.rows(), av.cols());
        let value = transpose2(av.data(), r, c);
        self.push("transpose", Op::Transpose(an), value)
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let an = self.check(a)?;
        let s: f64 = self.val(an).data().iter().sum();
        self.push("reduce_sum", Op::ReduceSum(an), Tensor::scalar(s))
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let an = self.check(a)?;
        let av = self.val(an);
        if av.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "reduce_mean",
                reason: "empty tensor".into(),
            });
        }
        let s: f64 = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push("reduce_mean", Op::ReduceMean(an), Tensor::scalar(s))
    }

    /// Strict 2D matrix product \[m×k\]·\[k×n\].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(an), self.val(bn));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let data = kernels::matmul(m, k, n, av.data(), bv.data());
        let value = Tensor::new(vec![m, n], data).expect("computed shape");
        self.push("matmul", Op::Matmul(an, bn), value)
    }

    /// Row-wise softmax over the last axis, numerically stabilized.
    ///
    /// `mask` (if given) marks the active positions of the last axis; masked
    /// positions output exactly 0 and active weights renormalize. A row with
    /// no active position is an error.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xn = self.check(x)?;
        let xv = self.val(xn);
        if xv.shape().is_empty() {
            return Err(TensorError::BadShape {
                op: "softmax_masked",
                shape: vec![],
                reason: "needs at least one axis".into(),
            });
        }
        let n = *xv.shape().last().expect("nonempty shape");
        if let Some(m) = mask {
            if m.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_masked",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
            if m.iter().all(|&b| !b) {
                return Err(TensorError::FullyMaskedRow { row: 0 });
            }
        }
        let rows = xv.len() / n;
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let active = |j: usize| mask.is_none_or(|m| m[j]);
            let mut hi = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if active(j) && v > hi {
                    hi = v;
                }
            }
            let mut denom = 0.0;
            let out = &mut data[r * n..(r + 1) * n];
            for j in 0..n {
                if active(j) {
                    out[j] = (row[j] - hi).exp();
                    denom += out[j];
                }
            }
            for v in out.iter_mut() {
                *v /= denom;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        // The mask is not saved: masked outputs are exactly 0, which already
        // silences their gradient in the softmax Jacobian.
        self.push("softmax_masked", Op::SoftmaxMasked { x: xn }, value)
    }

    /// Valid (unpadded) 1D cross-correlation.
    ///
    /// `x` is `[c_in, len]` or `[batch, c_in, len]`; `w` is
    /// `[c_out, c_in, k]`. Output length is `(len − k)/stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xn, wn) = (self.check(x)?, self.check(w)?);
        let (xv, wv) = (self.val(xn), self.val(wn));
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv1d",
                reason: "stride must be >= 1".into(),
            });
        }
        if wv.shape().len() != 3 {
            return Err(TensorError::BadShape {
                op: "conv1d",
                shape: wv.shape().to_vec(),
                reason: "kernels must be [c_out, c_in, k]".into(),
            });
        }
        let (batch, c_in, len, batched) = match *xv.shape() {
            [c, l] => (1, c, l, false),
            [b, c, l] => (b, c, l, true),
            _ => {
                return Err(TensorError::BadShape {
                    op: "conv1d",
                    shape: xv.shape().to_vec(),
                    reason: "input must be [c_in, len] or [batch, c_in, len]".into(),
                })
            }
        };
        let (c_out, w_cin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if w_cin != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if k > len {
            return Err(TensorError::BadShape {
                op: "conv1d",
                shape: xv.shape().to_vec(),
                reason: format!("kernel width {k} exceeds input length {len}"),
            });
        }
        let len_out = (len - k) / stride + 1;
        let data = kernels::conv1d_forward(batch, c_in, len, c_out, k, stride, xv.data(), wv.data());
        let shape = if batched {
            vec![batch, c_out, len_out]
        } else {
            vec![c_out, len_out]
        };
        let value = Tensor::new(shape, data).expect("computed shape");
        self.push(
            "conv1d",
            Op::Conv1d {
                x: xn,
                w: wn,
                stride,
            },
            value,
        )
    }

    /// Adds a per-channel bias to a `[batch, c, len]` tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xn, bn) = (self.check(x)?, self.check(b)?);
        let (xv, bv) = (self.val(xn), self.val(bn));
        let (shape_ok, c, l) = match *xv.shape() {
            [_, c, l] => (bv.shape() == [c], c, l),
            _ => (false, 0, 0),
        };
        if !shape_ok {
            return Err(TensorError::ShapeMismatch {
                op: "channel_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(c * l) {
            for (ci, row) in chunk.chunks_mut(l).enumerate() {
                let add = bv.data()[ci];
                for v in row.iter_mut() {
                    *v += add;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push("channel_bias", Op::ChannelBias { x: xn, b: bn }, value)
    }

    /// Adds a bias row to every row of a 2D tensor.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xn, bn) = (self.check(x)?, self.check(b)?);
        let (xv, bv) = (self.val(xn), self.val(bn));
        if xv.shape().len() != 2 || bv.shape() != [xv.cols()] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, &add) in row.iter_mut().zip(bv.data()) {
                *v += add;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push("add_row", Op::AddRow { x: xn, b: bn }, value)
    }

    /// Batch normalization with affine scale/shift.
    ///
    /// Accepts `[batch, features]` (stats over the batch axis) or
    /// `[batch, c, len]` (stats over batch and length per channel). Train
    /// mode normalizes by biased batch statistics (ε=1e-5) and updates
    /// `state` with momentum 0.9; eval mode normalizes by the running stats.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let (xn, gn, bn) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xv = self.val(xn);
        let (batch, features, spread) = match *xv.shape() {
            [b, f] => (b, f, BnSpread::Rows),
            [b, c, l] => (b, c, BnSpread::Channels { len: l }),
            _ => {
                return Err(TensorError::BadShape {
                    op: "batch_norm",
                    shape: xv.shape().to_vec(),
                    reason: "expected [batch, features] or [batch, c, len]".into(),
                })
            }
        };
        for (name, v) in [("gamma", gn), ("beta", bn)] {
            if self.val(v).shape() != [features] {
                return Err(TensorError::InvalidArgument {
                    op: "batch_norm",
                    reason: format!("{name} must have shape [{features}]"),
                });
            }
        }
        if state.features() != features {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                reason: format!(
                    "running stats sized {} but input has {features} features",
                    state.features()
                ),
            });
        }
        if mode == Mode::Train && batch < 2 {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                reason: "train mode requires batch >= 2".into(),
            });
        }
        let xd = self.val(xn).data().to_vec();
        let (mean, var) = match mode {
            Mode::Train => {
                let (m, v) = spread.batch_stats(&xd, batch, features);
                for f in 0..features {
                    state.running_mean[f] =
                        BN_MOMENTUM * state.running_mean[f] + (1.0 - BN_MOMENTUM) * m[f];
                    state.running_var[f] =
                        BN_MOMENTUM * state.running_var[f] + (1.0 - BN_MOMENTUM) * v[f];
                }
                (m, v)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = xd;
        spread.apply(&mut xhat, batch, features, |f, v| (v - mean[f]) * inv_std[f]);
        let gd = self.val(gn).data().to_vec();
        let bd = self.val(bn).data().to_vec();
        let mut out = xhat.clone();
        spread.apply(&mut out, batch, features, |f, v| gd[f] * v + bd[f]);
        let value = Tensor::new(self.val(xn).shape().to_vec(), out).expect("shape preserved");
        self.push(
            "batch_norm",
            Op::BatchNorm {
                x: xn,
                gamma: gn,
                beta: bn,
                train: mode == Mode::Train,
                xhat,
                inv_std,
            },
            value,
        )
    }

    /// Per-row layer normalization with affine scale/shift over the columns.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xn, gn, bn) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xv = self.val(xn);
        if xv.shape().len() != 2 {
            return Err(TensorError::BadShape {
                op: "layer_norm_rows",
                shape: xv.shape().to_vec(),
                reason: "expected a 2D tensor".into(),
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        for (name, v) in [("gamma", gn), ("beta", bn)] {
            if self.val(v).shape() != [cols] {
                return Err(TensorError::InvalidArgument {
                    op: "layer_norm_rows",
                    reason: format!("{name} must have shape [{cols}]"),
                });
            }
        }
        let xd = self.val(xn).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let gd = self.val(gn).data();
        let bd = self.val(bn).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = gd[c] * xhat[r * cols + c] + bd[c];
            }
        }
        let value = Tensor::new(vec![rows, cols], out).expect("computed shape");
        self.push(
            "layer_norm_rows",
            Op::LayerNorm {
                x: xn,
                gamma: gn,
                beta: bn,
                xhat,
                inv_std,
            },
            value,
        )
    }

    /// Inverted dropout: train mode zeroes each element with probability
    /// `rate` and scales survivors by 1/(1−rate); eval mode is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R, mode: Mode) -> Result<Var> {
        let xn = self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = self.val(xn);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<f64> = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push("dropout", Op::Dropout { x: xn, mask }, value)
    }

    /// Selects rows of a 2D tensor by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xn = self.check(x)?;
        let xv = self.val(xn);
        if xv.shape().len() != 2 {
            return Err(TensorError::BadShape {
                op: "gather_rows",
                shape: xv.shape().to_vec(),
                reason: "expected a 2D tensor".into(),
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row index {bad} out of range (rows = {rows})"),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![idx.len(), cols], data).expect("computed shape");
        self.push(
            "gather_rows",
            Op::GatherRows {
                x: xn,
                idx: idx.to_vec(),
            },
            value,
        )
    }

    /// Column-wise max over the rows of a 2D tensor; ties route the gradient
    /// to the first maximal row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let xv = self.val(xn);
        if xv.shape().len() != 2 || xv.rows() == 0 {
            return Err(TensorError::EmptyMask { op: "max_pool_rows" });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![0usize; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = xv.data()[r * cols + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::vector(out);
        self.push("max_pool_rows", Op::MaxPoolRows { x: xn, argmax }, value)
    }

    /// Column-wise mean over the rows of a 2D tensor.
    pub fn mean_pool_rows(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let xv = self.val(xn);
        if xv.shape().len() != 2 || xv.rows() == 0 {
            return Err(TensorError::EmptyMask {
                op: "mean_pool_rows",
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (c, acc) in out.iter_mut().enumerate() {
                *acc += xv.data()[r * cols + c];
            }
        }
        for v in out.iter_mut() {
            *v /= rows as f64;
        }
        let value = Tensor::vector(out);
        self.push("mean_pool_rows", Op::MeanPoolRows(xn), value)
    }

    /// Reverse pass from a scalar loss; returns gradients for every node
    /// that influenced it. Nodes that did not contribute report `None`.
    pub fn backward(&self, loss: Var) -> Result<GradStore> {
        let ln = self.check(loss)?;
        let lv = self.val(ln);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[ln] = Some(vec![1.0]);
        for i in (0..=ln).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.accumulate(i, g, lower);
        }
        let store = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shaped like its node")
                })
            })
            .collect();
        Ok(GradStore {
            tape_id: self.id,
            grads: store,
        })
    }

    /// Routes the gradient `g` of node `i` into `grads[..i]`.
    fn accumulate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut add_to = |node: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[node]
                .get_or_insert_with(|| vec![0.0; self.nodes[node].value.len()]);
            f(slot.as_mut_slice());
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(*a, &mut |ga| axpy(ga, g, 1.0));
                add_to(*b, &mut |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                add_to(*a, &mut |ga| axpy(ga, g, 1.0));
                add_to(*b, &mut |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                add_to(*a, &mut |ga| {
                    for ((ga, &gv), &bv) in ga.iter_mut().zip(g).zip(bd) {
                        *ga += gv * bv;
                    }
                });
                add_to(*b, &mut |gb| {
                    for ((gb, &gv), &av) in gb.iter_mut().zip(g).zip(ad) {
                        *gb += gv * av;
                    }
                });
            }
            Op::AddScalar(a) => add_to(*a, &mut |ga| axpy(ga, g, 1.0)),
            Op::MulScalar(a, c) => {
                let c = *c;
                add_to(*a, &mut |ga| axpy(ga, g, c));
            }
            Op::Relu(a) => {
                let ad = self.val(*a).data();
                add_to(*a, &mut |ga| {
                    for ((ga, &gv), &av) in ga.iter_mut().zip(g).zip(ad) {
                        if av > 0.0 {
                            *ga += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yd = self.nodes[i].value.data();
                add_to(*a, &mut |ga| {
                    for ((ga, &gv), &y) in ga.iter_mut().zip(g).zip(yd) {
                        *ga += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Concat { axis, inputs } => {
                let out_shape = self.nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0;
                for &n in inputs {
                    let len_i = self.val(n).shape()[*axis];
                    add_to(n, &mut |gn| {
                        for o in 0..outer {
                            let src = (o * axis_total + offset) * inner;
                            let dst = o * len_i * inner;
                            axpy(
                                &mut gn[dst..dst + len_i * inner],
                                &g[src..src + len_i * inner],
                                1.0,
                            );
                        }
                    });
                    offset += len_i;
                }
            }
            Op::Reshape(a) => add_to(*a, &mut |ga| axpy(ga, g, 1.0)),
            Op::Transpose(a) => {
                let (r, c) = (self.val(*a).rows(), self.val(*a).cols());
                // g has shape [c, r]; scatter back transposed.
                add_to(*a, &mut |ga| {
                    for j in 0..c {
                        for k in 0..r {
                            ga[k * c + j] += g[j * r + k];
                        }
                    }
                });
            }
            Op::ReduceSum(a) => {
                let gv = g[0];
                add_to(*a, &mut |ga| {
                    for v in ga.iter_mut() {
                        *v += gv;
                    }
                });
            }
            Op::ReduceMean(a) => {
                let gv = g[0] / self.val(*a).len() as f64;
                add_to(*a, &mut |ga| {
                    for v in ga.iter_mut() {
                        *v += gv;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let ga = kernels::matmul_bt(m, n, k, g, bv.data());
                let gb = kernels::matmul_at(k, m, n, av.data(), g);
                add_to(*a, &mut |s| axpy(s, &ga, 1.0));
                add_to(*b, &mut |s| axpy(s, &gb, 1.0));
            }
            Op::SoftmaxMasked { x } => {
                let y = self.nodes[i].value.data();
                let n = *self.nodes[i].value.shape().last().expect("has axis");
                add_to(*x, &mut |gx| {
                    for r in 0..y.len() / n {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(&s, &gv)| s * gv).sum();
                        for j in 0..n {
                            // Masked entries have yr[j] == 0, so they get no gradient.
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, stride } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (batch, c_in, len) = match *xv.shape() {
                    [c, l] => (1, c, l),
                    [b, c, l] => (b, c, l),
                    _ => unreachable!("validated at record time"),
                };
                let (c_out, _, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let (gx, gw) = kernels::conv1d_backward(
                    batch,
                    c_in,
                    len,
                    c_out,
                    k,
                    *stride,
                    xv.data(),
                    wv.data(),
                    g,
                );
                add_to(*x, &mut |s| axpy(s, &gx, 1.0));
                add_to(*w, &mut |s| axpy(s, &gw, 1.0));
            }
            Op::ChannelBias { x, b } => {
                let xv = self.val(*x);
                let (c, l) = (xv.shape()[1], xv.shape()[2]);
                add_to(*x, &mut |gx| axpy(gx, g, 1.0));
                add_to(*b, &mut |gb| {
                    for chunk in g.chunks(c * l) {
                        for (ci, row) in chunk.chunks(l).enumerate() {
                            gb[ci] += row.iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::AddRow { x, b } => {
                let cols = self.val(*b).len();
                add_to(*x, &mut |gx| axpy(gx, g, 1.0));
                add_to(*b, &mut |gb| {
                    for row in g.chunks(cols) {
                        axpy(gb, row, 1.0);
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                train,
                xhat,
                inv_std,
            } => {
                let xv = self.val(*x);
                let (batch, features, spread) = match *xv.shape() {
                    [b, f] => (b, f, BnSpread::Rows),
                    [b, c, l] => (b, c, BnSpread::Channels { len: l }),
                    _ => unreachable!("validated at record time"),
                };
                // Reduction count per feature: batch for [b,f], batch*len for [b,c,l].
                let count = (xv.len() / features) as f64;
                let gd = self.val(*gamma).data();
                let mut sum_g = vec![0.0; features];
                let mut sum_gx = vec![0.0; features];
                spread.fold(g, batch, features, |f, idx, gv| {
                    sum_g[f] += gv;
                    sum_gx[f] += gv * xhat[idx];
                });
                add_to(*beta, &mut |gb| axpy(gb, &sum_g, 1.0));
                add_to(*gamma, &mut |gg| axpy(gg, &sum_gx, 1.0));
                let train = *train;
                add_to(*x, &mut |gx| {
                    spread.fold(g, batch, features, |f, idx, gv| {
                        let base = if train {
                            gv - sum_g[f] / count - xhat[idx] * sum_gx[f] / count
                        } else {
                            gv
                        };
                        gx[idx] += gd[f] * inv_std[f] * base;
                    });
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = self.val(*gamma).len();
                let rows = xhat.len() / cols;
                let gd = self.val(*gamma).data();
                add_to(*beta, &mut |gb| {
                    for row in g.chunks(cols) {
                        axpy(gb, row, 1.0);
                    }
                });
                add_to(*gamma, &mut |gg| {
                    for (row, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((gg, &gv), &xh) in gg.iter_mut().zip(row).zip(xr) {
                            *gg += gv * xh;
                        }
                    }
                });
                add_to(*x, &mut |gx| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..cols {
                            let gg = gr[j] * gd[j];
                            m1 += gg;
                            m2 += gg * xr[j];
                        }
                        m1 /= cols as f64;
                        m2 /= cols as f64;
                        for j in 0..cols {
                            let gg = gr[j] * gd[j];
                            gx[r * cols + j] += inv_std[r] * (gg - m1 - xr[j] * m2);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                add_to(*x, &mut |gx| {
                    for ((gx, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *gx += gv * m;
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let cols = self.val(*x).cols();
                add_to(*x, &mut |gx| {
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(
                            &mut gx[src * cols..(src + 1) * cols],
                            &g[r * cols..(r + 1) * cols],
                            1.0,
                        );
                    }
                });
            }
            Op::MaxPoolRows { x, argmax } => {
                let cols = self.val(*x).cols();
                add_to(*x, &mut |gx| {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * cols + c] += g[c];
                    }
                });
            }
            Op::MeanPoolRows(x) => {
                let xv = self.val(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                add_to(*x, &mut |gx| {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[c] / rows as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Which axes batch-norm reduces over.
#[derive(Clone, Copy)]
enum BnSpread {
    /// `[batch, features]`: one statistic per column.
    Rows,
    /// `[batch, c, len]`: one statistic per channel.
    Channels { len: usize },
}

impl BnSpread {
    /// Per-feature biased mean and variance.
    fn batch_stats(self, x: &[f64], batch: usize, features: usize) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; features];
        let mut var = vec![0.0; features];
        let mut count = vec![0.0; features];
        self.fold(x, batch, features, |f, _, v| {
            mean[f] += v;
            count[f] += 1.0;
        });
        for f in 0..features {
            mean[f] /= count[f];
        }
        self.fold(x, batch, features, |f, _, v| {
            var[f] += (v - mean[f]) * (v - mean[f]);
        });
        for f in 0..features {
            var[f] /= count[f];
        }
        (mean, var)
    }

    /// Visits every element with its feature index and flat offset.
    fn fold(self, x: &[f64], batch: usize, features: usize, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            BnSpread::Rows => {
                for b in 0..batch {
                    for j in 0..features {
                        f(j, b * features + j, x[b * features + j]);
                    }
                }
            }
            BnSpread::Channels { len } => {
                for b in 0..batch {
                    for c in 0..features {
                        let base = (b * features + c) * len;
                        for l in 0..len {
                            f(c, base + l, x[base + l]);
                        }
                    }
                }
            }
        }
    }

    /// Rewrites every element through `f(feature, value)`.
    fn apply(self, x: &mut [f64], batch: usize, features: usize, f: impl Fn(usize, f64) -> f64) {
        match self {
            BnSpread::Rows => {
                for b in 0..batch {
                    for j in 0..features {
                        let idx = b * features + j;
                        x[idx] = f(j, x[idx]);
                    }
                }
            }
            BnSpread::Channels { len } => {
                for b in 0..batch {
                    for c in 0..features {
                        let base = (b * features + c) * len;
                        for v in &mut x[base..base + len] {
                            *v = f(c, *v);
                        }
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn transpose2(data: &[f64], rows: usize, cols: usize) -> Tensor {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    Tensor::new(vec![cols, rows], out).expect("computed shape")
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
