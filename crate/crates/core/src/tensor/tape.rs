//! Tape-recorded reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward computation. Each
//! operation validates shapes, evaluates eagerly through the kernels in
//! [`ops`](super::ops), and appends a node describing how to push gradients
//! back to its operands. Nodes are created in topological order by
//! construction, so [`Tape::backward`] is a single reverse sweep that visits
//! each node exactly once.
//!
//! The tape is confined to one thread. Parallel training and evaluation build
//! one tape per worker over frozen parameters.

use super::ops::{self, ConvGeom, PaddingKind};
use super::{Tensor, TensorError};

/// Handle to a value stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: VarId,
        b: VarId,
    },
    Relu {
        a: VarId,
    },
    Scale {
        a: VarId,
        factor: f64,
    },
    Reshape {
        a: VarId,
    },
    Sum {
        a: VarId,
    },
    Mean {
        a: VarId,
    },
    Matmul {
        a: VarId,
        b: VarId,
    },
    Conv2d {
        input: VarId,
        kernels: VarId,
        bias: VarId,
        geom: ConvGeom,
        /// im2col matrix saved from the forward pass.
        cols: Vec<f64>,
    },
    MaxPool2x2 {
        input: VarId,
        argmax: Vec<usize>,
    },
    SoftmaxRows {
        a: VarId,
        cols: usize,
    },
    SquashRows {
        a: VarId,
        cols: usize,
    },
    RowNorms {
        a: VarId,
        cols: usize,
    },
    CapsPredict {
        u: VarId,
        w: VarId,
        num_in: usize,
        num_out: usize,
        d_in: usize,
        d_out: usize,
    },
    CapsWeightedSum {
        coeff: VarId,
        u_hat: VarId,
        num_in: usize,
        num_out: usize,
        dim: usize,
    },
    CapsAgreement {
        u_hat: VarId,
        v: VarId,
        num_in: usize,
        num_out: usize,
        dim: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    is_param: bool,
}

/// Gradients produced by one backward sweep, indexed by [`VarId`].
pub struct GradMap {
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    /// Gradient of the loss with respect to `id`, if any flowed to it.
    /// Tracked parameters always have an entry (zeros when unreachable).
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Recorded forward computation over owned tensors.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, is_param: bool) -> VarId {
        self.nodes.push(Node { op, value, is_param });
        VarId(self.nodes.len() - 1)
    }

    /// Registers an input value. No gradient is retained for it unless it is
    /// on the path to a parameter.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value, false)
    }

    /// Registers a tracked parameter; [`Tape::backward`] always reports a
    /// gradient for it, zero-filled when the loss does not reach it.
    pub fn param(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── elementwise ──────────────────────────────────────────────

    fn binary(&mut self, kind: BinaryKind, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = ta.is_scalar() != tb.is_scalar();
        if !broadcast && ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                },
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let shape = if ta.is_scalar() && broadcast {
            tb.shape().to_vec()
        } else {
            ta.shape().to_vec()
        };
        let (av, bv) = (ta.data(), tb.data());
        let n = av.len().max(bv.len());
        let pick = |s: &[f64], i: usize| if s.len() == 1 { s[0] } else { s[i] };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (pick(av, i), pick(bv, i));
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::Binary { kind, a, b }, value, false))
    }

    /// Pointwise sum. Operand shapes must match, except that a scalar may pair
    /// with a tensor of any shape.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// `max(x, 0)` pointwise. The subgradient at exactly zero is taken as 0.
    pub fn relu(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Relu { a }, value, false)
    }

    /// Multiplication by a compile-time constant (not differentiated w.r.t.
    /// the constant).
    pub fn scale(&mut self, a: VarId, factor: f64) -> VarId {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Scale { a, factor }, value, false)
    }

    // ── structure ────────────────────────────────────────────────

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId, TensorError> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape { a }, value, false))
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(total), false)
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let total: f64 = t.data().iter().sum();
        let value = Tensor::scalar(total / t.len() as f64);
        self.push(Op::Mean { a }, value, false)
    }

    // ── linear algebra ───────────────────────────────────────────

    /// Rank-2 matrix product with gradients to both operands.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: ta.shape().to_vec(),
            });
        }
        if tb.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: tb.shape().to_vec(),
            });
        }
        if ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = ops::matmul(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::Matmul { a, b }, value, false))
    }

    // ── neural-network primitives ────────────────────────────────

    /// 2-D convolution plus channel bias over an `(H, W, C_in)` image or an
    /// `(B, H, W, C_in)` batch. Kernels are `(C_out, kh, kw, C_in)`.
    pub fn conv2d(
        &mut self,
        input: VarId,
        kernels: VarId,
        bias: VarId,
        stride: usize,
        padding: PaddingKind,
    ) -> Result<VarId, TensorError> {
        let tin = self.value(input);
        let tker = self.value(kernels);
        let tbias = self.value(bias);
        if tker.rank() != 4 {
            return Err(TensorError::RankMismatch {
                op: "conv2d kernels",
                expected: 4,
                shape: tker.shape().to_vec(),
            });
        }
        let (batch, h, w, c_in) = match tin.shape() {
            [h, w, c] => (1usize, *h, *w, *c),
            [b, h, w, c] => (*b, *h, *w, *c),
            other => {
                return Err(TensorError::RankMismatch {
                    op: "conv2d input",
                    expected: 3,
                    shape: other.to_vec(),
                })
            }
        };
        let [c_out, kh, kw, kc] = [tker.shape()[0], tker.shape()[1], tker.shape()[2], tker.shape()[3]];
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d channels",
                lhs: tin.shape().to_vec(),
                rhs: tker.shape().to_vec(),
            });
        }
        if tbias.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: tbias.shape().to_vec(),
                rhs: vec![c_out],
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let geom = ops::conv_geometry(batch, h, w, c_in, c_out, kh, kw, stride, padding).ok_or_else(|| {
            TensorError::DimensionTooSmall {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} does not fit {h}x{w} input with valid padding"),
            }
        })?;
        let cols = ops::im2col(tin.data(), &geom);
        let rows = geom.batch * geom.positions();
        let mut out = ops::matmul_nt(&cols, tker.data(), rows, geom.patch_len(), c_out);
        ops::add_channel_bias(&mut out, tbias.data());
        let shape = if tin.rank() == 3 {
            vec![geom.out_h, geom.out_w, c_out]
        } else {
            vec![batch, geom.out_h, geom.out_w, c_out]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
            value,
            false,
        ))
    }

    /// 2×2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, input: VarId) -> Result<VarId, TensorError> {
        let tin = self.value(input);
        let (batch, h, w, c) = match tin.shape() {
            [h, w, c] => (1usize, *h, *w, *c),
            [b, h, w, c] => (*b, *h, *w, *c),
            other => {
                return Err(TensorError::RankMismatch {
                    op: "maxpool2x2",
                    expected: 3,
                    shape: other.to_vec(),
                })
            }
        };
        if h < 2 || w < 2 {
            return Err(TensorError::DimensionTooSmall {
                op: "maxpool2x2",
                detail: format!("spatial extent {h}x{w} is below the 2x2 window"),
            });
        }
        let (out, argmax) = ops::maxpool2x2(tin.data(), batch, h, w, c);
        let shape = if tin.rank() == 3 {
            vec![h / 2, w / 2, c]
        } else {
            vec![batch, h / 2, w / 2, c]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::MaxPool2x2 { input, argmax }, value, false))
    }

    // ── row-wise capsule primitives ──────────────────────────────

    fn rank2(&self, id: VarId, op: &'static str) -> Result<(usize, usize), TensorError> {
        let t = self.value(id);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: other.to_vec(),
            }),
        }
    }

    /// Softmax over the last axis of an `(R, C)` tensor.
    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.rank2(a, "softmax_rows")?;
        let data = ops::softmax_rows(self.value(a).data(), c);
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(Op::SoftmaxRows { a, cols: c }, value, false))
    }

    /// Norm-bounding squash of each row of an `(R, C)` tensor.
    pub fn squash_rows(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.rank2(a, "squash_rows")?;
        let input = self.value(a);
        if !input.all_finite() {
            return Err(TensorError::NonFinite { op: "squash_rows" });
        }
        let data = ops::squash_rows(input.data(), c);
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(Op::SquashRows { a, cols: c }, value, false))
    }

    /// Euclidean norm of each row of an `(R, C)` tensor, ε-regularized so the
    /// gradient exists at the zero row.
    pub fn row_norms(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (r, c) = self.rank2(a, "row_norms")?;
        let data = ops::row_norms(self.value(a).data(), c);
        let value = Tensor::new(vec![r], data)?;
        Ok(self.push(Op::RowNorms { a, cols: c }, value, false))
    }

    /// Per-pair capsule predictions: `u (I, D)` against `w (I, J, D, E)`
    /// gives `(I, J, E)`.
    pub fn caps_predict(&mut self, u: VarId, w: VarId) -> Result<VarId, TensorError> {
        let (num_in, d_in) = self.rank2(u, "caps_predict")?;
        let tw = self.value(w);
        let [wi, num_out, wd, d_out] = match tw.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            other => {
                return Err(TensorError::RankMismatch {
                    op: "caps_predict transforms",
                    expected: 4,
                    shape: other.to_vec(),
                })
            }
        };
        if wi != num_in || wd != d_in {
            return Err(TensorError::ShapeMismatch {
                op: "caps_predict",
                lhs: vec![num_in, d_in],
                rhs: tw.shape().to_vec(),
            });
        }
        let data = ops::caps_predict(self.value(u).data(), tw.data(), num_in, num_out, d_in, d_out);
        let value = Tensor::new(vec![num_in, num_out, d_out], data)?;
        Ok(self.push(
            Op::CapsPredict {
                u,
                w,
                num_in,
                num_out,
                d_in,
                d_out,
            },
            value,
            false,
        ))
    }

    /// Weighted sum over input capsules: `c (I, J)` with `û (I, J, E)` gives
    /// `(J, E)`.
    pub fn caps_weighted_sum(&mut self, coeff: VarId, u_hat: VarId) -> Result<VarId, TensorError> {
        let (num_in, num_out) = self.rank2(coeff, "caps_weighted_sum coefficients")?;
        let tu = self.value(u_hat);
        match tu.shape() {
            [i, j, dim] if *i == num_in && *j == num_out => {
                let dim = *dim;
                let data = ops::caps_weighted_sum(self.value(coeff).data(), tu.data(), num_in, num_out, dim);
                let value = Tensor::new(vec![num_out, dim], data)?;
                Ok(self.push(
                    Op::CapsWeightedSum {
                        coeff,
                        u_hat,
                        num_in,
                        num_out,
                        dim,
                    },
                    value,
                    false,
                ))
            }
            other => Err(TensorError::ShapeMismatch {
                op: "caps_weighted_sum",
                lhs: vec![num_in, num_out],
                rhs: other.to_vec(),
            }),
        }
    }

    /// Dot-product agreement between predictions `û (I, J, E)` and outputs
    /// `v (J, E)`, giving `(I, J)`.
    pub fn caps_agreement(&mut self, u_hat: VarId, v: VarId) -> Result<VarId, TensorError> {
        let tu = self.value(u_hat);
        let [num_in, num_out, dim] = match tu.shape() {
            [i, j, e] => [*i, *j, *e],
            other => {
                return Err(TensorError::RankMismatch {
                    op: "caps_agreement",
                    expected: 3,
                    shape: other.to_vec(),
                })
            }
        };
        let tv = self.value(v);
        if tv.shape() != [num_out, dim] {
            return Err(TensorError::ShapeMismatch {
                op: "caps_agreement",
                lhs: tu.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let data = ops::caps_agreement(tu.data(), tv.data(), num_in, num_out, dim);
        let value = Tensor::new(vec![num_in, num_out], data)?;
        Ok(self.push(
            Op::CapsAgreement {
                u_hat,
                v,
                num_in,
                num_out,
                dim,
            },
            value,
            false,
        ))
    }

    // ── backward ─────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns one gradient per node the
    /// loss reaches; tracked parameters are always present, zero-filled when
    /// unreachable. The tape is not consumed: repeated calls on the same tape
    /// produce identical results.
    pub fn backward(&self, loss: VarId) -> Result<GradMap, TensorError> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(d_out) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &d_out, &mut grads);
            // Leaves keep their gradient for the caller.
            if matches!(self.nodes[idx].op, Op::Leaf) || idx == loss.0 {
                grads[idx] = Some(d_out);
            }
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let tensor = match g {
                Some(buf) => Some(Tensor::new(node.value.shape().to_vec(), buf).expect("gradient shape")),
                None if node.is_param => Some(Tensor::zeros(node.value.shape())),
                None => None,
            };
            out.push(tensor);
        }
        Ok(GradMap { grads: out })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: VarId, contribution: &[f64]) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, &c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => grads[id.0] = Some(contribution.to_vec()),
        }
    }

    /// Accumulate into a possibly scalar-broadcast operand: when the operand
    /// holds one element the contribution is summed into it.
    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<f64>>], id: VarId, contribution: &[f64]) {
        if self.nodes[id.0].value.len() == 1 && contribution.len() > 1 {
            let total: f64 = contribution.iter().sum();
            Self::accumulate(grads, id, &[total]);
        } else {
            Self::accumulate(grads, id, contribution);
        }
    }

    fn backward_node(&self, idx: usize, d_out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let pick = |s: &[f64], i: usize| if s.len() == 1 { s[0] } else { s[i] };
                match kind {
                    BinaryKind::Add => {
                        self.accumulate_broadcast(grads, *a, d_out);
                        self.accumulate_broadcast(grads, *b, d_out);
                    }
                    BinaryKind::Sub => {
                        self.accumulate_broadcast(grads, *a, d_out);
                        let neg: Vec<f64> = d_out.iter().map(|&d| -d).collect();
                        self.accumulate_broadcast(grads, *b, &neg);
                    }
                    BinaryKind::Mul => {
                        let d_a: Vec<f64> = d_out.iter().enumerate().map(|(i, &d)| d * pick(bv, i)).collect();
                        self.accumulate_broadcast(grads, *a, &d_a);
                        let d_b: Vec<f64> = d_out.iter().enumerate().map(|(i, &d)| d * pick(av, i)).collect();
                        self.accumulate_broadcast(grads, *b, &d_b);
                    }
                }
            }
            Op::Relu { a } => {
                let input = self.nodes[a.0].value.data();
                let d: Vec<f64> = d_out
                    .iter()
                    .zip(input)
                    .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *a, &d);
            }
            Op::Scale { a, factor } => {
                let d: Vec<f64> = d_out.iter().map(|&d| d * factor).collect();
                Self::accumulate(grads, *a, &d);
            }
            Op::Reshape { a } => {
                Self::accumulate(grads, *a, d_out);
            }
            Op::Sum { a } => {
                let n = self.nodes[a.0].value.len();
                Self::accumulate(grads, *a, &vec![d_out[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].value.len();
                Self::accumulate(grads, *a, &vec![d_out[0] / n as f64; n]);
            }
            Op::Matmul { a, b } => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = dOut · Bᵀ ; dB = Aᵀ · dOut
                let d_a = ops::matmul_nt(d_out, tb.data(), m, n, k);
                Self::accumulate(grads, *a, &d_a);
                let d_b = ops::matmul_tn(ta.data(), d_out, m, k, n);
                Self::accumulate(grads, *b, &d_b);
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let rows = geom.batch * geom.positions();
                let d_bias = ops::channel_sums(d_out, geom.c_out);
                Self::accumulate(grads, *bias, &d_bias);
                // dK (C_out, K) = dOutᵀ · cols
                let d_ker = ops::matmul_tn(d_out, cols, rows, geom.c_out, geom.patch_len());
                Self::accumulate(grads, *kernels, &d_ker);
                // dCols = dOut · K, then scatter back through the patches.
                let d_cols = ops::matmul(d_out, self.nodes[kernels.0].value.data(), rows, geom.c_out, geom.patch_len());
                let d_input = ops::col2im_accumulate(&d_cols, geom);
                Self::accumulate(grads, *input, &d_input);
            }
            Op::MaxPool2x2 { input, argmax } => {
                let mut d_input = vec![0.0; self.nodes[input.0].value.len()];
                for (&src, &d) in argmax.iter().zip(d_out) {
                    d_input[src] += d;
                }
                Self::accumulate(grads, *input, &d_input);
            }
            Op::SoftmaxRows { a, cols } => {
                let output = self.nodes[idx].value.data();
                let d = ops::softmax_rows_backward(output, d_out, *cols);
                Self::accumulate(grads, *a, &d);
            }
            Op::SquashRows { a, cols } => {
                let input = self.nodes[a.0].value.data();
                let d = ops::squash_rows_backward(input, d_out, *cols);
                Self::accumulate(grads, *a, &d);
            }
            Op::RowNorms { a, cols } => {
                let input = self.nodes[a.0].value.data();
                let norms = self.nodes[idx].value.data();
                let d = ops::row_norms_backward(input, norms, d_out, *cols);
                Self::accumulate(grads, *a, &d);
            }
            Op::CapsPredict {
                u,
                w,
                num_in,
                num_out,
                d_in,
                d_out: dim_out,
            } => {
                let (d_u, d_w) = ops::caps_predict_backward(
                    self.nodes[u.0].value.data(),
                    self.nodes[w.0].value.data(),
                    d_out,
                    *num_in,
                    *num_out,
                    *d_in,
                    *dim_out,
                );
                Self::accumulate(grads, *u, &d_u);
                Self::accumulate(grads, *w, &d_w);
            }
            Op::CapsWeightedSum {
                coeff,
                u_hat,
                num_in,
                num_out,
                dim,
            } => {
                let (d_c, d_u) = ops::caps_weighted_sum_backward(
                    self.nodes[coeff.0].value.data(),
                    self.nodes[u_hat.0].value.data(),
                    d_out,
                    *num_in,
                    *num_out,
                    *dim,
                );
                Self::accumulate(grads, *coeff, &d_c);
                Self::accumulate(grads, *u_hat, &d_u);
            }
            Op::CapsAgreement {
                u_hat,
                v,
                num_in,
                num_out,
                dim,
            } => {
                let (d_u, d_v) = ops::caps_agreement_backward(
                    self.nodes[u_hat.0].value.data(),
                    self.nodes[v.0].value.data(),
                    d_out,
                    *num_in,
                    *num_out,
                    *dim,
                );
                Self::accumulate(grads, *u_hat, &d_u);
                Self::accumulate(grads, *v, &d_v);
            }
        }
    }
}
