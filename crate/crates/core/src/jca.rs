//! Joint co-attention: the recursive fusion layer at the heart of the model.
//!
//! One layer fuses the two modality representations into a joint matrix,
//! squashes their scaled bilinear correspondence into affinity matrices,
//! gates those into attention maps, and adds a projected update back onto
//! each modality:
//!
//! ```text
//! J   = fuse(A, V)                      (strategy: add / mul / concat, opt. FC)
//! C_a = tanh((A^T W_ja J) / sqrt(d))    C_v analogous with W_jv
//! H_a = relu(W_a A + W_ca C_a^T)        H_v analogous
//! A'  = A + W_ha^T H_a                  V'  = V + W_hv^T H_v
//! ```
//!
//! Layers stack recursively; each layer owns an independent parameter set, so
//! the total parameter count grows by a fixed amount per added layer. The
//! `Original` co-attention mode is the ablation variant where each modality
//! attends to the other directly (the joint matrix is replaced by the
//! opposite modality).

use crate::error::{Error, Result};
use crate::linear::{linear, LinearParams, LinearVars};
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand_core::RngCore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionCombine {
    Addition,
    Multiplication,
    Concatenation,
}

/// How the joint representation is produced from the two modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionStrategy {
    pub combine: FusionCombine,
    /// Apply a learned width-preserving linear map (with bias) after
    /// combining.
    pub fc: bool,
}

impl FusionStrategy {
    pub const fn new(combine: FusionCombine, fc: bool) -> Self {
        FusionStrategy { combine, fc }
    }

    /// Width of the joint representation for the given modality widths.
    pub fn joint_dim(&self, d_a: usize, d_v: usize) -> usize {
        match self.combine {
            FusionCombine::Concatenation => d_a + d_v,
            FusionCombine::Addition | FusionCombine::Multiplication => d_a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoAttentionMode {
    /// Both modalities attend from the joint representation.
    Joint,
    /// Each modality attends directly to the other.
    Original,
}

/// The eight learnable matrices of one layer, plus the optional fusion FC.
#[derive(Debug, Clone, PartialEq)]
pub struct JcaLayerParams {
    /// `N x N`, between the joint representation and the audio feature.
    pub w_ja: Tensor,
    /// `N x N`, between the joint representation and the visual feature.
    pub w_jv: Tensor,
    /// `k x N`.
    pub w_a: Tensor,
    /// `k x N`.
    pub w_v: Tensor,
    /// `k x d` (joint mode) or `k x d_v` (original mode).
    pub w_ca: Tensor,
    /// `k x d` (joint mode) or `k x d_a` (original mode).
    pub w_cv: Tensor,
    /// `k x N`.
    pub w_ha: Tensor,
    /// `k x N`.
    pub w_hv: Tensor,
    /// Present iff the strategy carries an FC (joint mode only).
    pub fc: Option<LinearParams>,
}

impl JcaLayerParams {
    pub fn init<R: RngCore>(
        n: usize,
        k: usize,
        d_a: usize,
        d_v: usize,
        strategy: FusionStrategy,
        mode: CoAttentionMode,
        rng: &mut R,
    ) -> Self {
        let (d_ca, d_cv) = affinity_widths(d_a, d_v, strategy, mode);
        let joint_dim = strategy.joint_dim(d_a, d_v);
        let nb = 1.0 / crate::fmath::sqrt(n as f64);
        let kb = 1.0 / crate::fmath::sqrt(k as f64);
        JcaLayerParams {
            w_ja: crate::rng::uniform_tensor(rng, &[n, n], nb),
            w_jv: crate::rng::uniform_tensor(rng, &[n, n], nb),
            w_a: crate::rng::uniform_tensor(rng, &[k, n], nb),
            w_v: crate::rng::uniform_tensor(rng, &[k, n], nb),
            w_ca: crate::rng::uniform_tensor(
                rng,
                &[k, d_ca],
                1.0 / crate::fmath::sqrt(d_ca as f64),
            ),
            w_cv: crate::rng::uniform_tensor(
                rng,
                &[k, d_cv],
                1.0 / crate::fmath::sqrt(d_cv as f64),
            ),
            w_ha: crate::rng::uniform_tensor(rng, &[k, n], kb),
            w_hv: crate::rng::uniform_tensor(rng, &[k, n], kb),
            fc: (matches!(mode, CoAttentionMode::Joint) && strategy.fc)
                .then(|| LinearParams::init(joint_dim, joint_dim, rng)),
        }
    }

    pub fn zeros(
        n: usize,
        k: usize,
        d_a: usize,
        d_v: usize,
        strategy: FusionStrategy,
        mode: CoAttentionMode,
    ) -> Self {
        let (d_ca, d_cv) = affinity_widths(d_a, d_v, strategy, mode);
        let joint_dim = strategy.joint_dim(d_a, d_v);
        JcaLayerParams {
            w_ja: Tensor::zeros(&[n, n]),
            w_jv: Tensor::zeros(&[n, n]),
            w_a: Tensor::zeros(&[k, n]),
            w_v: Tensor::zeros(&[k, n]),
            w_ca: Tensor::zeros(&[k, d_ca]),
            w_cv: Tensor::zeros(&[k, d_cv]),
            w_ha: Tensor::zeros(&[k, n]),
            w_hv: Tensor::zeros(&[k, n]),
            fc: (matches!(mode, CoAttentionMode::Joint) && strategy.fc)
                .then(|| LinearParams::zeros(joint_dim, joint_dim)),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_ja"), &self.w_ja));
        out.push((format!("{prefix}.w_jv"), &self.w_jv));
        out.push((format!("{prefix}.w_a"), &self.w_a));
        out.push((format!("{prefix}.w_v"), &self.w_v));
        out.push((format!("{prefix}.w_ca"), &self.w_ca));
        out.push((format!("{prefix}.w_cv"), &self.w_cv));
        out.push((format!("{prefix}.w_ha"), &self.w_ha));
        out.push((format!("{prefix}.w_hv"), &self.w_hv));
        if let Some(fc) = &self.fc {
            fc.visit(&format!("{prefix}.fc"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w_ja"), &mut self.w_ja));
        out.push((format!("{prefix}.w_jv"), &mut self.w_jv));
        out.push((format!("{prefix}.w_a"), &mut self.w_a));
        out.push((format!("{prefix}.w_v"), &mut self.w_v));
        out.push((format!("{prefix}.w_ca"), &mut self.w_ca));
        out.push((format!("{prefix}.w_cv"), &mut self.w_cv));
        out.push((format!("{prefix}.w_ha"), &mut self.w_ha));
        out.push((format!("{prefix}.w_hv"), &mut self.w_hv));
        if let Some(fc) = &mut self.fc {
            fc.visit_mut(&format!("{prefix}.fc"), out);
        }
    }

    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<JcaLayerVars> {
        let w_ja = cursor.take()?;
        let w_jv = cursor.take()?;
        let w_a = cursor.take()?;
        let w_v = cursor.take()?;
        let w_ca = cursor.take()?;
        let w_cv = cursor.take()?;
        let w_ha_t = tape.transpose(cursor.take()?)?;
        let w_hv_t = tape.transpose(cursor.take()?)?;
        let fc = match &self.fc {
            Some(fc) => Some(fc.vars_from(tape, cursor)?),
            None => None,
        };
        Ok(JcaLayerVars {
            w_ja,
            w_jv,
            w_a,
            w_v,
            w_ca,
            w_cv,
            w_ha_t,
            w_hv_t,
            fc,
        })
    }
}

fn affinity_widths(
    d_a: usize,
    d_v: usize,
    strategy: FusionStrategy,
    mode: CoAttentionMode,
) -> (usize, usize) {
    match mode {
        CoAttentionMode::Joint => {
            let d = strategy.joint_dim(d_a, d_v);
            (d, d)
        }
        CoAttentionMode::Original => (d_v, d_a),
    }
}

pub struct JcaLayerVars {
    pub w_ja: Var,
    pub w_jv: Var,
    pub w_a: Var,
    pub w_v: Var,
    pub w_ca: Var,
    pub w_cv: Var,
    /// `N x k`: transpose of the stored `w_ha`.
    pub w_ha_t: Var,
    /// `N x k`: transpose of the stored `w_hv`.
    pub w_hv_t: Var,
    pub fc: Option<LinearVars>,
}

/// Fuses the two modality matrices into the joint representation.
pub fn joint_representation(
    tape: &Tape,
    strategy: FusionStrategy,
    fc: Option<&LinearVars>,
    a: Var,
    v: Var,
) -> Result<Var> {
    let combined = match strategy.combine {
        FusionCombine::Concatenation => tape.concat(&[a, v], 1)?,
        FusionCombine::Addition => tape.add(a, v)?,
        FusionCombine::Multiplication => tape.mul(a, v)?,
    };
    match (strategy.fc, fc) {
        (false, _) => Ok(combined),
        (true, Some(fc)) => linear(tape, fc, combined),
        (true, None) => Err(Error::contract(
            "joint_representation",
            "strategy carries an FC but no FC parameters were leased",
        )),
    }
}

/// `tanh((X^T W J) / sqrt(scale_dim))`: the correspondence between one
/// modality (`N x d_m`) and the joint representation (`N x d`), as a
/// `d_m x d` matrix with entries in `[-1, 1]`.
pub fn affinity(tape: &Tape, x: Var, w: Var, j: Var, scale_dim: usize) -> Result<Var> {
    let xt_w = tape.matmul(tape.transpose(x)?, w)?;
    let raw = tape.matmul(xt_w, j)?;
    tape.tanh(tape.scale(raw, 1.0 / crate::fmath::sqrt(scale_dim as f64))?)
}

/// `H_a = relu(W_a A + W_ca C_a^T)` and the visual analogue; both `k x d_m`
/// and nonnegative.
pub fn attention_maps(
    tape: &Tape,
    vars: &JcaLayerVars,
    a: Var,
    v: Var,
    c_a: Var,
    c_v: Var,
) -> Result<(Var, Var)> {
    let h_a = tape.relu(tape.add(
        tape.matmul(vars.w_a, a)?,
        tape.matmul(vars.w_ca, tape.transpose(c_a)?)?,
    )?)?;
    let h_v = tape.relu(tape.add(
        tape.matmul(vars.w_v, v)?,
        tape.matmul(vars.w_cv, tape.transpose(c_v)?)?,
    )?)?;
    Ok((h_a, h_v))
}

/// One joint co-attention layer; output shapes equal input shapes.
pub fn jca_layer(
    tape: &Tape,
    vars: &JcaLayerVars,
    strategy: FusionStrategy,
    mode: CoAttentionMode,
    a_in: Var,
    v_in: Var,
) -> Result<(Var, Var)> {
    let (c_a, c_v) = match mode {
        CoAttentionMode::Joint => {
            let j = joint_representation(tape, strategy, vars.fc.as_ref(), a_in, v_in)?;
            let d = tape.shape(j)[1];
            (
                affinity(tape, a_in, vars.w_ja, j, d)?,
                affinity(tape, v_in, vars.w_jv, j, d)?,
            )
        }
        CoAttentionMode::Original => {
            let d_a = tape.shape(a_in)[1];
            let d_v = tape.shape(v_in)[1];
            (
                affinity(tape, a_in, vars.w_ja, v_in, d_v)?,
                affinity(tape, v_in, vars.w_jv, a_in, d_a)?,
            )
        }
    };
    let (h_a, h_v) = attention_maps(tape, vars, a_in, v_in, c_a, c_v)?;
    let a_out = tape.add(a_in, tape.matmul(vars.w_ha_t, h_a)?)?;
    let v_out = tape.add(v_in, tape.matmul(vars.w_hv_t, h_v)?)?;
    Ok((a_out, v_out))
}

/// The recursive stack: `depth` independently parameterized layers.
#[derive(Debug, Clone, PartialEq)]
pub struct JcaStack {
    pub layers: Vec<JcaLayerParams>,
    pub strategy: FusionStrategy,
    pub mode: CoAttentionMode,
}

impl JcaStack {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: RngCore>(
        n: usize,
        k: usize,
        d_a: usize,
        d_v: usize,
        depth: usize,
        strategy: FusionStrategy,
        mode: CoAttentionMode,
        rng: &mut R,
    ) -> Self {
        JcaStack {
            layers: (0..depth)
                .map(|_| JcaLayerParams::init(n, k, d_a, d_v, strategy, mode, rng))
                .collect(),
            strategy,
            mode,
        }
    }

    pub fn zeros(
        n: usize,
        k: usize,
        d_a: usize,
        d_v: usize,
        depth: usize,
        strategy: FusionStrategy,
        mode: CoAttentionMode,
    ) -> Self {
        JcaStack {
            layers: (0..depth)
                .map(|_| JcaLayerParams::zeros(n, k, d_a, d_v, strategy, mode))
                .collect(),
            strategy,
            mode,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn vars_from(&self, tape: &Tape, cursor: &mut VarCursor<'_>) -> Result<JcaStackVars> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layers.push(layer.vars_from(tape, cursor)?);
        }
        Ok(JcaStackVars { layers })
    }
}

pub struct JcaStackVars {
    pub layers: Vec<JcaLayerVars>,
}

/// Applies the layers in order; depth 0 returns the inputs unchanged.
pub fn jca_stack_forward(
    tape: &Tape,
    vars: &JcaStackVars,
    strategy: FusionStrategy,
    mode: CoAttentionMode,
    a_0: Var,
    v_0: Var,
) -> Result<(Var, Var)> {
    let mut a = a_0;
    let mut v = v_0;
    for layer in &vars.layers {
        let (a_next, v_next) = jca_layer(tape, layer, strategy, mode, a, v)?;
        a = a_next;
        v = v_next;
    }
    Ok((a, v))
}
