//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation records a node onto the [`Tape`]; [`Tape::backward`]
//! replays the nodes in reverse, accumulating gradients additively across
//! fan-out. Nodes are stored in topological order by construction, so the
//! reverse sweep visits each exactly once. Each node pairs a value buffer
//! with an optional gradient buffer that exists iff the node requires a
//! gradient, addressed by a [`Var`] handle.
//!
//! A tape serves one forward/backward cycle and is single-threaded; training
//! loops create a fresh tape per step and read gradients out before dropping
//! it. Forward and backward are deterministic: identical inputs produce
//! bitwise-identical values and gradients.

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::{self, Tensor};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that issued it. The default value is a placeholder handle to the tape's
/// first node, useful for pre-sizing buffers that are overwritten in full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        offset: usize,
        len: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
    },
    RepeatRows {
        x: Var,
        rows: usize,
    },
    ColMax {
        x: Var,
        argmax: Vec<usize>,
    },
    MlsmLoss {
        scores: Var,
        targets: Tensor,
    },
    /// Negative-control fixture: forward identity, backward deliberately
    /// scaled by 1.5 so gradient-check failure paths can be exercised.
    DebugMisgrad {
        x: Var,
    },
}

/// Sign pattern of every kinked operation input (relu signs, column-max
/// argmax choices), in tape order. Gradient checking compares the signatures
/// of the two perturbed forward passes to detect finite-difference steps that
/// straddle a non-differentiable point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinkSignature {
    relu_signs: Vec<i8>,
    argmaxes: Vec<usize>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input that should receive a gradient.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let nodes = self.nodes.borrow();
        let t = &nodes[v.0].value;
        if !t.is_scalar() {
            return Err(Error::contract(
                "scalar_value",
                format!("expected scalar, got shape {:?}", t.shape()),
            ));
        }
        Ok(t.data()[0])
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Gradient of the last [`Tape::backward`] target with respect to `v`.
    /// `None` when `v` does not require a gradient or backward has not run.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape matches value")
        })
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value out of a forward operation"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.borrow().len() {
            return Err(Error::contract(op, "variable is not on this tape"));
        }
        Ok(())
    }

    // -- linear algebra ----------------------------------------------------

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let at = &nodes[a.0].value;
            let bt = &nodes[b.0].value;
            let mismatch = || Error::ShapeMismatch {
                op: "matmul",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            };
            let (m, ka) = at.dims2("matmul").map_err(|_| mismatch())?;
            let (kb, n) = bt.dims2("matmul").map_err(|_| mismatch())?;
            if ka != kb {
                return Err(mismatch());
            }
            let mut out = vec![0.0; m * n];
            tensor::matmul_acc(at.data(), bt.data(), m, ka, n, &mut out);
            (
                Tensor::new(vec![m, n], out)?,
                nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::MatMul { a, b }, requires))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        self.check(x, "transpose")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let (r, c) = xt.dims2("transpose")?;
            let mut out = vec![0.0; r * c];
            tensor::transpose_data(xt.data(), r, c, &mut out);
            (Tensor::new(vec![c, r], out)?, nodes[x.0].requires_grad)
        };
        Ok(self.push(value, Op::Transpose { x }, requires))
    }

    // -- shape surgery -----------------------------------------------------

    /// Concatenates rank-1 or rank-2 tensors along `axis`. All non-concat
    /// extents must match.
    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::contract("concat", "empty input list"));
        }
        for &v in inputs {
            self.check(v, "concat")?;
        }
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let first = nodes[inputs[0].0].value.shape().to_vec();
            let rank = first.len();
            if axis >= rank {
                return Err(Error::InvalidAxis {
                    op: "concat",
                    axis,
                    rank,
                });
            }
            let mut axis_total = 0;
            for &v in inputs {
                let s = nodes[v.0].value.shape();
                if s.len() != rank
                    || s.iter()
                        .zip(&first)
                        .enumerate()
                        .any(|(i, (a, b))| i != axis && a != b)
                {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        left: first.clone(),
                        right: s.to_vec(),
                    });
                }
                axis_total += s[axis];
            }
            let mut out_shape = first.clone();
            out_shape[axis] = axis_total;
            let mut out = vec![0.0; out_shape.iter().product()];
            match (rank, axis) {
                (1, 0) => {
                    let mut at = 0;
                    for &v in inputs {
                        let d = nodes[v.0].value.data();
                        out[at..at + d.len()].copy_from_slice(d);
                        at += d.len();
                    }
                }
                (2, 0) => {
                    let mut at = 0;
                    for &v in inputs {
                        let d = nodes[v.0].value.data();
                        out[at..at + d.len()].copy_from_slice(d);
                        at += d.len();
                    }
                }
                (2, 1) => {
                    let rows = first[0];
                    let out_cols = axis_total;
                    let mut col_at = 0;
                    for &v in inputs {
                        let t = &nodes[v.0].value;
                        let cols = t.shape()[1];
                        for r in 0..rows {
                            let src = &t.data()[r * cols..(r + 1) * cols];
                            out[r * out_cols + col_at..r * out_cols + col_at + cols]
                                .copy_from_slice(src);
                        }
                        col_at += cols;
                    }
                }
                _ => {
                    return Err(Error::InvalidAxis {
                        op: "concat",
                        axis,
                        rank,
                    })
                }
            }
            (
                Tensor::new(out_shape, out)?,
                inputs.iter().any(|&v| nodes[v.0].requires_grad),
            )
        };
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            requires,
        ))
    }

    /// A contiguous window along `axis`.
    pub fn slice(&self, x: Var, axis: usize, offset: usize, len: usize) -> Result<Var> {
        self.check(x, "slice")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let shape = xt.shape();
            let rank = shape.len();
            if axis >= rank || rank > 2 {
                return Err(Error::InvalidAxis {
                    op: "slice",
                    axis,
                    rank,
                });
            }
            if len == 0 || offset + len > shape[axis] {
                return Err(Error::contract(
                    "slice",
                    format!(
                        "window {offset}..{} out of range for extent {}",
                        offset + len,
                        shape[axis]
                    ),
                ));
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            let mut out = vec![0.0; out_shape.iter().product()];
            copy_slice_region(xt.data(), shape, axis, offset, len, &mut out, false);
            (Tensor::new(out_shape, out)?, nodes[x.0].requires_grad)
        };
        Ok(self.push(
            value,
            Op::Slice {
                x,
                axis,
                offset,
                len,
            },
            requires,
        ))
    }

    /// Splits `x` into consecutive windows along `axis`. The extents must sum
    /// to the axis extent; `split(concat(xs), axis, sizes)` round-trips
    /// bitwise.
    pub fn split(&self, x: Var, axis: usize, extents: &[usize]) -> Result<Vec<Var>> {
        self.check(x, "split")?;
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "split",
                axis,
                rank: shape.len(),
            });
        }
        let total: usize = extents.iter().sum();
        if total != shape[axis] {
            return Err(Error::contract(
                "split",
                format!(
                    "extents {:?} sum to {}, axis extent is {}",
                    extents, total, shape[axis]
                ),
            ));
        }
        let mut out = Vec::with_capacity(extents.len());
        let mut offset = 0;
        for &len in extents {
            out.push(self.slice(x, axis, offset, len)?);
            offset += len;
        }
        Ok(out)
    }

    /// Tiles a `1 x d` row `rows` times into a `rows x d` matrix.
    pub fn repeat_rows(&self, x: Var, rows: usize) -> Result<Var> {
        self.check(x, "repeat_rows")?;
        if rows == 0 {
            return Err(Error::contract("repeat_rows", "row count must be positive"));
        }
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let (r, d) = xt.dims2("repeat_rows")?;
            if r != 1 {
                return Err(Error::contract(
                    "repeat_rows",
                    format!("expected a 1 x d row, got shape {:?}", xt.shape()),
                ));
            }
            let mut out = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                out.extend_from_slice(xt.data());
            }
            (Tensor::new(vec![rows, d], out)?, nodes[x.0].requires_grad)
        };
        Ok(self.push(value, Op::RepeatRows { x, rows }, requires))
    }

    // -- elementwise -------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul")
    }

    fn binary_elementwise(&self, a: Var, b: Var, op: &'static str) -> Result<Var> {
        self.check(a, op)?;
        self.check(b, op)?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let at = &nodes[a.0].value;
            let bt = &nodes[b.0].value;
            if at.shape() != bt.shape() {
                return Err(Error::ShapeMismatch {
                    op,
                    left: at.shape().to_vec(),
                    right: bt.shape().to_vec(),
                });
            }
            let data: Vec<f64> = match op {
                "add" => at.iter().zip(bt.iter()).map(|(x, y)| x + y).collect(),
                _ => at.iter().zip(bt.iter()).map(|(x, y)| x * y).collect(),
            };
            (
                Tensor::new(at.shape().to_vec(), data)?,
                nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            )
        };
        let node_op = if op == "add" {
            Op::Add { a, b }
        } else {
            Op::Mul { a, b }
        };
        Ok(self.push(value, node_op, requires))
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        self.check(x, "scale")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let data: Vec<f64> = xt.iter().map(|v| v * factor).collect();
            (
                Tensor::new(xt.shape().to_vec(), data)?,
                nodes[x.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::Scale { x, factor }, requires))
    }

    // -- activations -------------------------------------------------------

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary_map(x, Op::Tanh { x }, fmath::tanh)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary_map(x, Op::Relu { x }, |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary_map(x, Op::Sigmoid { x }, fmath::sigmoid)
    }

    fn unary_map(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(x, "activation")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let data: Vec<f64> = xt.iter().map(|&v| f(v)).collect();
            (
                Tensor::new(xt.shape().to_vec(), data)?,
                nodes[x.0].requires_grad,
            )
        };
        Ok(self.push(value, op, requires))
    }

    /// Softmax along `axis`, computed with max-subtraction so large scores do
    /// not overflow.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "softmax")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let rank = xt.rank();
            if axis >= rank || rank > 2 {
                return Err(Error::InvalidAxis {
                    op: "softmax",
                    axis,
                    rank,
                });
            }
            let mut out = xt.data().to_vec();
            for_each_lane(xt.shape(), axis, |lane| {
                let mut max = f64::NEG_INFINITY;
                for &i in lane {
                    if out[i] > max {
                        max = out[i];
                    }
                }
                let mut sum = 0.0;
                for &i in lane {
                    out[i] = fmath::exp(out[i] - max);
                    sum += out[i];
                }
                for &i in lane {
                    out[i] /= sum;
                }
            });
            (
                Tensor::new(xt.shape().to_vec(), out)?,
                nodes[x.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::Softmax { x, axis }, requires))
    }

    // -- reductions and loss -----------------------------------------------

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, x: Var) -> Result<Var> {
        self.check(x, "sum")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            (Tensor::scalar(xt.iter().sum()), nodes[x.0].requires_grad)
        };
        Ok(self.push(value, Op::Sum { x }, requires))
    }

    /// Per-column maximum of a rank-2 tensor, as a `1 x d` row. Ties resolve
    /// to the lowest row index; the gradient routes to the selected entries.
    pub fn col_max(&self, x: Var) -> Result<Var> {
        self.check(x, "col_max")?;
        let (value, argmax, requires) = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.0].value;
            let (r, c) = xt.dims2("col_max")?;
            let mut best = vec![0usize; c];
            let mut out = vec![f64::NEG_INFINITY; c];
            for row in 0..r {
                for col in 0..c {
                    let v = xt.data()[row * c + col];
                    if v > out[col] {
                        out[col] = v;
                        best[col] = row;
                    }
                }
            }
            (
                Tensor::new(vec![1, c], out)?,
                best,
                nodes[x.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::ColMax { x, argmax }, requires))
    }

    /// Multi-label soft-margin loss on pre-sigmoid scores, averaged over both
    /// segments and classes:
    ///
    /// `L = mean_rows (1/C) sum_c [ y*softplus(-x) + (1-y)*softplus(x) ]`
    ///
    /// which is the numerically stable form of
    /// `-(1/C) sum_c [ y*log(sigmoid(x)) + (1-y)*log(sigmoid(-x)) ]`.
    ///
    /// `targets` may hold arbitrary values in `[0, 1]` (multi-label form);
    /// with `strict` set, each row must be exactly one-hot.
    pub fn mlsm_loss(&self, scores: Var, targets: &Tensor, strict: bool) -> Result<Var> {
        self.check(scores, "mlsm_loss")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            let st = &nodes[scores.0].value;
            if st.shape() != targets.shape() {
                return Err(Error::ShapeMismatch {
                    op: "mlsm_loss",
                    left: st.shape().to_vec(),
                    right: targets.shape().to_vec(),
                });
            }
            let (n, c) = st.dims2("mlsm_loss")?;
            if strict {
                for row in 0..n {
                    let slice = &targets.data()[row * c..(row + 1) * c];
                    let hot = slice.iter().filter(|&&v| v == 1.0).count();
                    let cold = slice.iter().filter(|&&v| v == 0.0).count();
                    if hot != 1 || hot + cold != c {
                        return Err(Error::contract(
                            "mlsm_loss",
                            format!("strict mode: target row {row} is not one-hot"),
                        ));
                    }
                }
            }
            let mut acc = 0.0;
            for (&x, &y) in st.iter().zip(targets.iter()) {
                acc += y * fmath::softplus(-x) + (1.0 - y) * fmath::softplus(x);
            }
            (
                Tensor::scalar(acc / (n as f64 * c as f64)),
                nodes[scores.0].requires_grad,
            )
        };
        Ok(self.push(
            value,
            Op::MlsmLoss {
                scores,
                targets: targets.clone(),
            },
            requires,
        ))
    }

    /// Negative-control fixture: forward identity whose recorded gradient
    /// rule is wrong by a factor of 1.5. Exists so that gradient-check
    /// failure reporting can be exercised end to end.
    pub fn debug_misgrad(&self, x: Var) -> Result<Var> {
        self.check(x, "debug_misgrad")?;
        let (value, requires) = {
            let nodes = self.nodes.borrow();
            (nodes[x.0].value.clone(), nodes[x.0].requires_grad)
        };
        Ok(self.push(value, Op::DebugMisgrad { x }, requires))
    }

    // -- backward ------------------------------------------------------------

    /// Populates the gradient of every gradient-requiring node reachable from
    /// `loss`, accumulating additively across fan-out. `loss` must be scalar.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if loss.0 >= nodes.len() {
            return Err(Error::contract("backward", "variable is not on this tape"));
        }
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    nodes[loss.0].value.shape()
                ),
            ));
        }
        for node in nodes.iter_mut() {
            node.grad = if node.requires_grad {
                Some(vec![0.0; node.value.numel()])
            } else {
                None
            };
        }
        match nodes[loss.0].grad.as_mut() {
            Some(g) => g[0] = 1.0,
            // Loss does not depend on any gradient-requiring leaf.
            None => return Ok(()),
        }

        for id in (0..=loss.0).rev() {
            let (lo, hi) = nodes.split_at_mut(id);
            let node = &hi[0];
            let gout = match node.grad.as_ref() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (lo[a.0].value.shape()[0], lo[a.0].value.shape()[1]);
                    let n = lo[b.0].value.shape()[1];
                    if lo[a.0].grad.is_some() {
                        let mut da = vec![0.0; m * k];
                        tensor::matmul_bt_acc(gout, lo[b.0].value.data(), m, n, k, &mut da);
                        accumulate(lo, *a, &da);
                    }
                    if lo[b.0].grad.is_some() {
                        let mut db = vec![0.0; k * n];
                        tensor::matmul_at_acc(lo[a.0].value.data(), gout, m, k, n, &mut db);
                        accumulate(lo, *b, &db);
                    }
                }
                Op::Transpose { x } => {
                    if lo[x.0].grad.is_some() {
                        let (r, c) = (lo[x.0].value.shape()[0], lo[x.0].value.shape()[1]);
                        let mut dx = vec![0.0; r * c];
                        tensor::transpose_data(gout, c, r, &mut dx);
                        accumulate(lo, *x, &dx);
                    }
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = node.value.shape().to_vec();
                    let mut offset = 0;
                    for &v in inputs {
                        let in_shape = lo[v.0].value.shape().to_vec();
                        let len = in_shape[*axis];
                        if lo[v.0].grad.is_some() {
                            let mut dv = vec![0.0; lo[v.0].value.numel()];
                            copy_slice_region(gout, &out_shape, *axis, offset, len, &mut dv, false);
                            accumulate(lo, v, &dv);
                        }
                        offset += len;
                    }
                }
                Op::Slice {
                    x,
                    axis,
                    offset,
                    len,
                } => {
                    if lo[x.0].grad.is_some() {
                        let in_shape = lo[x.0].value.shape().to_vec();
                        let mut dx = vec![0.0; lo[x.0].value.numel()];
                        copy_slice_region(gout, &in_shape, *axis, *offset, *len, &mut dx, true);
                        accumulate(lo, *x, &dx);
                    }
                }
                Op::Add { a, b } => {
                    accumulate(lo, *a, gout);
                    accumulate(lo, *b, gout);
                }
                Op::Mul { a, b } => {
                    if lo[a.0].grad.is_some() {
                        let da: Vec<f64> = gout
                            .iter()
                            .zip(lo[b.0].value.iter())
                            .map(|(g, v)| g * v)
                            .collect();
                        accumulate(lo, *a, &da);
                    }
                    if lo[b.0].grad.is_some() {
                        let db: Vec<f64> = gout
                            .iter()
                            .zip(lo[a.0].value.iter())
                            .map(|(g, v)| g * v)
                            .collect();
                        accumulate(lo, *b, &db);
                    }
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                    accumulate(lo, *x, &dx);
                }
                Op::Tanh { x } => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(node.value.iter())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(lo, *x, &dx);
                }
                // The subgradient at exactly zero is defined as zero.
                Op::Relu { x } => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(lo[x.0].value.iter())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(lo, *x, &dx);
                }
                Op::Sigmoid { x } => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(node.value.iter())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(lo, *x, &dx);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for_each_lane(node.value.shape(), *axis, |lane| {
                        let mut dot = 0.0;
                        for &i in lane {
                            dot += gout[i] * y[i];
                        }
                        for &i in lane {
                            dx[i] = y[i] * (gout[i] - dot);
                        }
                    });
                    accumulate(lo, *x, &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![gout[0]; lo[x.0].value.numel()];
                    accumulate(lo, *x, &dx);
                }
                Op::RepeatRows { x, rows } => {
                    let d = lo[x.0].value.numel();
                    let mut dx = vec![0.0; d];
                    for r in 0..*rows {
                        for c in 0..d {
                            dx[c] += gout[r * d + c];
                        }
                    }
                    accumulate(lo, *x, &dx);
                }
                Op::ColMax { x, argmax } => {
                    let cols = argmax.len();
                    let mut dx = vec![0.0; lo[x.0].value.numel()];
                    for (c, &row) in argmax.iter().enumerate() {
                        dx[row * cols + c] += gout[c];
                    }
                    accumulate(lo, *x, &dx);
                }
                Op::MlsmLoss { scores, targets } => {
                    let st = &lo[scores.0].value;
                    let (n, c) = (st.shape()[0], st.shape()[1]);
                    let norm = gout[0] / (n as f64 * c as f64);
                    let dx: Vec<f64> = st
                        .iter()
                        .zip(targets.iter())
                        .map(|(&x, &y)| norm * (fmath::sigmoid(x) - y))
                        .collect();
                    accumulate(lo, *scores, &dx);
                }
                Op::DebugMisgrad { x } => {
                    let dx: Vec<f64> = gout.iter().map(|g| 1.5 * g).collect();
                    accumulate(lo, *x, &dx);
                }
            }
        }
        Ok(())
    }

    /// Non-smoothness fingerprint of the recorded forward pass.
    pub fn kink_signature(&self) -> KinkSignature {
        let nodes = self.nodes.borrow();
        let mut relu_signs = Vec::new();
        let mut argmaxes = Vec::new();
        for node in nodes.iter() {
            match &node.op {
                Op::Relu { x } => {
                    for &v in nodes[x.0].value.iter() {
                        relu_signs.push(if v > 0.0 {
                            1
                        } else if v < 0.0 {
                            -1
                        } else {
                            0
                        });
                    }
                }
                Op::ColMax { argmax, .. } => argmaxes.extend_from_slice(argmax),
                _ => {}
            }
        }
        KinkSignature {
            relu_signs,
            argmaxes,
        }
    }
}

/// Doles out leased parameter leaves in registry order; each component's
/// `vars_from` consumes exactly its own blocks.
pub struct VarCursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> VarCursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        VarCursor { vars, pos: 0 }
    }

    pub fn take(&mut self) -> Result<Var> {
        let v = self
            .vars
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::contract("lease", "parameter leaf list exhausted"))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn finished(&self) -> bool {
        self.pos == self.vars.len()
    }
}

fn accumulate(nodes: &mut [Node], v: Var, delta: &[f64]) {
    if let Some(g) = nodes[v.0].grad.as_mut() {
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

/// Copies the `offset..offset+len` window along `axis` between a full buffer
/// of `full_shape` and the window buffer. `scatter` writes window -> full
/// (accumulating); otherwise reads full -> window.
fn copy_slice_region(
    full_or_window_src: &[f64],
    full_shape: &[usize],
    axis: usize,
    offset: usize,
    len: usize,
    dst: &mut [f64],
    scatter: bool,
) {
    match (full_shape.len(), axis) {
        (1, 0) => {
            if scatter {
                for i in 0..len {
                    dst[offset + i] += full_or_window_src[i];
                }
            } else {
                dst.copy_from_slice(&full_or_window_src[offset..offset + len]);
            }
        }
        (2, 0) => {
            let cols = full_shape[1];
            if scatter {
                for i in 0..len * cols {
                    dst[offset * cols + i] += full_or_window_src[i];
                }
            } else {
                dst.copy_from_slice(&full_or_window_src[offset * cols..(offset + len) * cols]);
            }
        }
        (2, 1) => {
            let rows = full_shape[0];
            let cols = full_shape[1];
            for r in 0..rows {
                for c in 0..len {
                    if scatter {
                        dst[r * cols + offset + c] += full_or_window_src[r * len + c];
                    } else {
                        dst[r * len + c] = full_or_window_src[r * cols + offset + c];
                    }
                }
            }
        }
        _ => unreachable!("slice supports rank 1 and 2 only"),
    }
}

/// Visits index groups ("lanes") along `axis` of a rank-1 or rank-2 shape.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    match (shape.len(), axis) {
        (1, 0) => {
            let lane: Vec<usize> = (0..shape[0]).collect();
            f(&lane);
        }
        (2, 1) => {
            let (rows, cols) = (shape[0], shape[1]);
            for r in 0..rows {
                let lane: Vec<usize> = (r * cols..(r + 1) * cols).collect();
                f(&lane);
            }
        }
        (2, 0) => {
            let (rows, cols) = (shape[0], shape[1]);
            for c in 0..cols {
                let lane: Vec<usize> = (0..rows).map(|r| r * cols + c).collect();
                f(&lane);
            }
        }
        _ => unreachable!("softmax supports rank 1 and 2 only"),
    }
}
