//! Dense affine layer: `y = x W^T + b`.

use crate::error::Result;
use crate::rng;
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand_core::RngCore;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `out_dim x in_dim`.
    pub weight: Tensor,
    /// `1 x out_dim`.
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init<R: RngCore>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / crate::fmath::sqrt(in_dim as f64);
        LinearParams {
            weight: rng::uniform_tensor(rng, &[out_dim, in_dim], bound),
            bias: Tensor::zeros(&[1, out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[1, out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<LinearVars> {
        let weight = cursor.take()?;
        let bias = cursor.take()?;
        Ok(LinearVars {
            weight_t: tape.transpose(weight)?,
            bias,
        })
    }
}

/// Tape-side view of a [`LinearParams`]; the weight is transposed once at
/// lease time so row batches multiply directly.
pub struct LinearVars {
    pub weight_t: Var,
    pub bias: Var,
}

/// Applies the affine map to an `n x in_dim` batch of rows.
pub fn linear(tape: &Tape, vars: &LinearVars, x: Var) -> Result<Var> {
    let y = tape.matmul(x, vars.weight_t)?;
    let rows = tape.shape(y)[0];
    let b = tape.repeat_rows(vars.bias, rows)?;
    tape.add(y, b)
}
