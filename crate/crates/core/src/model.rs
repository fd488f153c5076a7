//! The assembled network: early fusion, uni-modal Bi-LSTM encoders, the
//! joint co-attention stack, and the prediction head, together with the
//! configuration, the parameter registry, and the per-sequence forward pass.

use crate::error::{Error, Result};
use crate::fusion::{
    audio_guided_pool, baseline_pool, EarlyFusionParams, EarlyFusionVars, PoolKind,
};
use crate::head::{predict, HeadVars, PredictionHeadParams};
use crate::jca::{
    jca_stack_forward, CoAttentionMode, FusionCombine, FusionStrategy, JcaStack, JcaStackVars,
};
use crate::lstm::{bilstm_rerepresent, BiLstmParams, BiLstmVars};
use crate::rng;
use crate::tape::{Tape, Var, VarCursor};
use crate::tensor::Tensor;
use crate::{RAW_AUDIO_DIM, VISUAL_CHANNELS, VISUAL_POSITIONS};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyFusionKind {
    AudioGuided,
    Average,
    Max,
}

/// Dimensions and switches of the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Segments per sequence (N).
    pub segments: usize,
    /// Audio feature width after re-representation (d_a, even).
    pub audio_dim: usize,
    /// Visual feature width after re-representation (d_v, even).
    pub visual_dim: usize,
    /// Rows of the attention probability maps (k).
    pub attention_rows: usize,
    /// Number of stacked joint co-attention layers.
    pub depth: usize,
    pub strategy: FusionStrategy,
    pub coattention: CoAttentionMode,
    pub early_fusion: EarlyFusionKind,
    /// Residual embedding for all three Bi-LSTMs.
    pub residual_embedding: bool,
    /// Event categories plus one background class.
    pub class_count: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::config("segment count must be positive"));
        }
        for (name, dim) in [("d_a", self.audio_dim), ("d_v", self.visual_dim)] {
            if dim < 2 || dim % 2 != 0 {
                return Err(Error::config(format!(
                    "{name} must be even and at least 2, got {dim}"
                )));
            }
        }
        if self.attention_rows == 0 {
            return Err(Error::config("attention row count k must be positive"));
        }
        if self.class_count < 2 {
            return Err(Error::config("class count must be at least 2"));
        }
        if matches!(
            self.strategy.combine,
            FusionCombine::Addition | FusionCombine::Multiplication
        ) && self.audio_dim != self.visual_dim
        {
            return Err(Error::config(format!(
                "addition/multiplication fusion requires d_a == d_v, got {} and {}",
                self.audio_dim, self.visual_dim
            )));
        }
        Ok(())
    }
}

/// One video: per-segment audio features, raw visual grids, and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    /// `N x 128`.
    pub audio: Tensor,
    /// `N` grids of `49 x 512`.
    pub visual: Vec<Tensor>,
    /// `N` class indices; the background is `class_count - 1`.
    pub labels: Vec<u8>,
}

impl SequencePair {
    pub fn validate(&self, segments: usize) -> Result<()> {
        let check = |ok: bool, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::contract("sequence_pair", msg))
            }
        };
        check(
            self.audio.shape() == [segments, RAW_AUDIO_DIM],
            format!(
                "audio shape {:?}, expected [{segments}, {RAW_AUDIO_DIM}]",
                self.audio.shape()
            ),
        )?;
        check(
            self.visual.len() == segments,
            format!("{} visual grids for {segments} segments", self.visual.len()),
        )?;
        for grid in &self.visual {
            check(
                grid.shape() == [VISUAL_POSITIONS, VISUAL_CHANNELS],
                format!(
                    "visual grid shape {:?}, expected [{VISUAL_POSITIONS}, {VISUAL_CHANNELS}]",
                    grid.shape()
                ),
            )?;
        }
        check(
            self.labels.len() == segments,
            format!("{} labels for {segments} segments", self.labels.len()),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Present iff the early fusion is audio-guided.
    pub early: Option<EarlyFusionParams>,
    pub audio_encoder: BiLstmParams,
    pub visual_encoder: BiLstmParams,
    pub stack: JcaStack,
    pub head: PredictionHeadParams,
}

impl Model {
    /// Builds and initializes every parameter from one seed. The draw order
    /// is fixed, so a given (config, seed) pair is bitwise reproducible.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let early = matches!(config.early_fusion, EarlyFusionKind::AudioGuided)
            .then(|| EarlyFusionParams::init(&mut rng));
        let audio_hidden = config.audio_dim / 2;
        let visual_hidden = config.visual_dim / 2;
        let audio_in = step_in(RAW_AUDIO_DIM, audio_hidden, config.residual_embedding);
        let visual_in = step_in(VISUAL_CHANNELS, visual_hidden, config.residual_embedding);
        Ok(Model {
            early,
            audio_encoder: BiLstmParams::init(audio_in, audio_hidden, &mut rng),
            visual_encoder: BiLstmParams::init(visual_in, visual_hidden, &mut rng),
            stack: JcaStack::init(
                config.segments,
                config.attention_rows,
                config.audio_dim,
                config.visual_dim,
                config.depth,
                config.strategy,
                config.coattention,
                &mut rng,
            ),
            head: PredictionHeadParams::init(
                config.audio_dim,
                config.visual_dim,
                config.class_count,
                config.residual_embedding,
                &mut rng,
            ),
            config,
        })
    }

    /// All-zero parameters; used for parameter accounting and tests.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let early = matches!(config.early_fusion, EarlyFusionKind::AudioGuided)
            .then(EarlyFusionParams::zeros);
        let audio_hidden = config.audio_dim / 2;
        let visual_hidden = config.visual_dim / 2;
        let audio_in = step_in(RAW_AUDIO_DIM, audio_hidden, config.residual_embedding);
        let visual_in = step_in(VISUAL_CHANNELS, visual_hidden, config.residual_embedding);
        Ok(Model {
            early,
            audio_encoder: BiLstmParams::zeros(audio_in, audio_hidden),
            visual_encoder: BiLstmParams::zeros(visual_in, visual_hidden),
            stack: JcaStack::zeros(
                config.segments,
                config.attention_rows,
                config.audio_dim,
                config.visual_dim,
                config.depth,
                config.strategy,
                config.coattention,
            ),
            head: PredictionHeadParams::zeros(
                config.audio_dim,
                config.visual_dim,
                config.class_count,
                config.residual_embedding,
            ),
            config,
        })
    }

    /// Every parameter block, named, in canonical registry order. Leasing,
    /// gradients, the optimizer and checkpoints all follow this order.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(early) = &self.early {
            early.visit("early", &mut out);
        }
        self.audio_encoder.visit("audio_enc", &mut out);
        self.visual_encoder.visit("visual_enc", &mut out);
        self.stack.visit("jca", &mut out);
        self.head.visit("head", &mut out);
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(early) = &mut self.early {
            early.visit_mut("early", &mut out);
        }
        self.audio_encoder.visit_mut("audio_enc", &mut out);
        self.visual_encoder.visit_mut("visual_enc", &mut out);
        self.stack.visit_mut("jca", &mut out);
        self.head.visit_mut("head", &mut out);
        out
    }

    /// Exact count of scalar learnable parameters.
    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Per-module parameter totals, in presentation order.
    pub fn param_count_by_module(&self) -> Vec<(&'static str, usize)> {
        let sum_prefix = |prefix: &str| -> usize {
            self.visit()
                .iter()
                .filter(|(name, _)| name.starts_with(prefix))
                .map(|(_, t)| t.numel())
                .sum()
        };
        vec![
            ("early_fusion", sum_prefix("early.")),
            ("audio_encoder", sum_prefix("audio_enc.")),
            ("visual_encoder", sum_prefix("visual_enc.")),
            ("jca_stack", sum_prefix("jca.")),
            ("head", sum_prefix("head.")),
        ]
    }

    /// Copies every parameter onto the tape as a gradient-requiring leaf and
    /// returns the leaves (registry order) plus the typed view.
    pub fn lease(&self, tape: &Tape) -> Result<(Vec<Var>, ModelVars)> {
        let leaves: Vec<Var> = self
            .visit()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        let vars = self.vars_from(tape, &leaves)?;
        Ok((leaves, vars))
    }

    /// Builds the typed view over an externally supplied leaf list (used by
    /// the gradient checker, which owns the leaves).
    pub fn vars_from(&self, tape: &Tape, leaves: &[Var]) -> Result<ModelVars> {
        let mut cursor = VarCursor::new(leaves);
        let early = match &self.early {
            Some(early) => Some(early.vars_from(tape, &mut cursor)?),
            None => None,
        };
        let vars = ModelVars {
            early,
            audio_encoder: self.audio_encoder.vars_from(tape, &mut cursor)?,
            visual_encoder: self.visual_encoder.vars_from(tape, &mut cursor)?,
            stack: self.stack.vars_from(tape, &mut cursor)?,
            head: self.head.vars_from(tape, &mut cursor)?,
        };
        if !cursor.finished() {
            return Err(Error::contract(
                "lease",
                "leaf list longer than the parameter registry",
            ));
        }
        Ok(vars)
    }

    /// Full forward pass over one sequence. With `want_attention`, the
    /// per-segment early-fusion weight columns are returned for export
    /// (audio-guided mode only).
    pub fn forward(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        seq: &SequencePair,
        want_attention: bool,
    ) -> Result<ForwardOut> {
        seq.validate(self.config.segments)?;
        let n = self.config.segments;
        let residual = self.config.residual_embedding;

        let audio = tape.constant(seq.audio.clone());
        let audio_rows = tape.split(audio, 0, &vec![1; n])?;

        let mut pooled_rows = Vec::with_capacity(n);
        let mut attention = Vec::new();
        for (grid_t, &audio_row) in seq.visual.iter().zip(&audio_rows) {
            let grid = tape.constant(grid_t.clone());
            let pooled = match self.config.early_fusion {
                EarlyFusionKind::AudioGuided => {
                    let proj = vars
                        .early
                        .as_ref()
                        .ok_or_else(|| {
                            Error::contract("forward", "audio-guided fusion without parameters")
                        })?
                        .audio_proj;
                    let (pooled, weights) = audio_guided_pool(tape, proj, audio_row, grid)?;
                    if want_attention {
                        attention.push(weights);
                    }
                    pooled
                }
                EarlyFusionKind::Average => baseline_pool(tape, grid, PoolKind::Average)?,
                EarlyFusionKind::Max => baseline_pool(tape, grid, PoolKind::Max)?,
            };
            pooled_rows.push(pooled);
        }
        let visual_seq = tape.concat(&pooled_rows, 0)?;

        let a_0 = bilstm_rerepresent(tape, &vars.audio_encoder, audio, residual)?;
        let v_0 = bilstm_rerepresent(tape, &vars.visual_encoder, visual_seq, residual)?;

        let (a_l, v_l) = jca_stack_forward(
            tape,
            &vars.stack,
            self.stack.strategy,
            self.stack.mode,
            a_0,
            v_0,
        )?;

        let prediction = predict(tape, &vars.head, a_l, v_l, residual)?;
        Ok(ForwardOut {
            scores: prediction.scores,
            probs: prediction.probs,
            attention,
        })
    }
}

fn step_in(raw: usize, hidden: usize, residual: bool) -> usize {
    if residual {
        raw + hidden
    } else {
        raw
    }
}

/// Tape-side view of all model parameters for one forward/backward cycle.
pub struct ModelVars {
    pub early: Option<EarlyFusionVars>,
    pub audio_encoder: BiLstmVars,
    pub visual_encoder: BiLstmVars,
    pub stack: JcaStackVars,
    pub head: HeadVars,
}

pub struct ForwardOut {
    /// Pre-sigmoid `N x C` scores (feed these to the loss).
    pub scores: Var,
    /// Post-sigmoid `N x C` probabilities (argmax these for the prediction).
    pub probs: Var,
    /// Early-fusion weight columns (`49 x 1` each), when requested.
    pub attention: Vec<Var>,
}
