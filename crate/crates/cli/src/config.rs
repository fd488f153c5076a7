//! Run configuration: one flat JSON document, merged with CLI flag overrides
//! and the `AVE_SEED` environment fallback.

use crate::error::CliError;
use ave_core::jca::{CoAttentionMode, FusionCombine, FusionStrategy};
use ave_core::model::{EarlyFusionKind, ModelConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum FusionStrategyName {
    Addition,
    Multiplication,
    Concatenation,
    AdditionFc,
    MultiplicationFc,
    #[default]
    ConcatenationFc,
}

impl FusionStrategyName {
    pub fn to_core(self) -> FusionStrategy {
        match self {
            FusionStrategyName::Addition => FusionStrategy::new(FusionCombine::Addition, false),
            FusionStrategyName::Multiplication => {
                FusionStrategy::new(FusionCombine::Multiplication, false)
            }
            FusionStrategyName::Concatenation => {
                FusionStrategy::new(FusionCombine::Concatenation, false)
            }
            FusionStrategyName::AdditionFc => FusionStrategy::new(FusionCombine::Addition, true),
            FusionStrategyName::MultiplicationFc => {
                FusionStrategy::new(FusionCombine::Multiplication, true)
            }
            FusionStrategyName::ConcatenationFc => {
                FusionStrategy::new(FusionCombine::Concatenation, true)
            }
        }
    }

    pub const ALL: [FusionStrategyName; 6] = [
        FusionStrategyName::Addition,
        FusionStrategyName::Multiplication,
        FusionStrategyName::Concatenation,
        FusionStrategyName::AdditionFc,
        FusionStrategyName::MultiplicationFc,
        FusionStrategyName::ConcatenationFc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionStrategyName::Addition => "addition",
            FusionStrategyName::Multiplication => "multiplication",
            FusionStrategyName::Concatenation => "concatenation",
            FusionStrategyName::AdditionFc => "addition_fc",
            FusionStrategyName::MultiplicationFc => "multiplication_fc",
            FusionStrategyName::ConcatenationFc => "concatenation_fc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum CoattentionModeName {
    #[default]
    Joint,
    Original,
}

impl CoattentionModeName {
    pub fn to_core(self) -> CoAttentionMode {
        match self {
            CoattentionModeName::Joint => CoAttentionMode::Joint,
            CoattentionModeName::Original => CoAttentionMode::Original,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum EarlyFusionName {
    #[default]
    AudioGuided,
    Average,
    Max,
}

impl EarlyFusionName {
    pub fn to_core(self) -> EarlyFusionKind {
        match self {
            EarlyFusionName::AudioGuided => EarlyFusionKind::AudioGuided,
            EarlyFusionName::Average => EarlyFusionKind::Average,
            EarlyFusionName::Max => EarlyFusionKind::Max,
        }
    }
}

/// Flat run configuration. Every field has a default so partial JSON
/// documents work; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Segments per sequence (N).
    pub n: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub k: usize,
    /// Joint co-attention recursion depth.
    pub depth: usize,
    pub fusion_strategy: FusionStrategyName,
    pub residual_embedding: bool,
    pub coattention_mode: CoattentionModeName,
    pub early_fusion: EarlyFusionName,
    /// Event categories plus one background class.
    pub class_count: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Resolved at startup: flag > config > AVE_SEED > 0.
    pub seed: Option<u64>,
    /// Share of the training file held out for validation when no val_path
    /// is given.
    pub val_fraction: f64,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 10,
            d_a: 512,
            d_v: 512,
            k: 10,
            depth: 4,
            fusion_strategy: FusionStrategyName::default(),
            residual_embedding: true,
            coattention_mode: CoattentionModeName::default(),
            early_fusion: EarlyFusionName::default(),
            class_count: 29,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 16,
            seed: None,
            val_fraction: 0.2,
            train_path: None,
            val_path: None,
            test_path: None,
            checkpoint_path: None,
            log_path: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Final seed: explicit config value, then `AVE_SEED`, then 0.
    pub fn resolved_seed(&self) -> u64 {
        if let Some(seed) = self.seed {
            return seed;
        }
        std::env::var("AVE_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CliError::config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.class_count > 255 {
            return Err(CliError::config(
                "class_count must fit in a label byte (255 is reserved)",
            ));
        }
        let config = ModelConfig {
            segments: self.n,
            audio_dim: self.d_a,
            visual_dim: self.d_v,
            attention_rows: self.k,
            depth: self.depth,
            strategy: self.fusion_strategy.to_core(),
            coattention: self.coattention_mode.to_core(),
            early_fusion: self.early_fusion.to_core(),
            residual_embedding: self.residual_embedding,
            class_count: self.class_count,
        };
        config.validate()?;
        Ok(config)
    }

    /// Serializes the resolved configuration next to an artifact so every
    /// run is self-describing.
    pub fn write_echo(&self, artifact: &Path) -> Result<PathBuf, CliError> {
        let mut echoed = self.clone();
        echoed.seed = Some(self.resolved_seed());
        let echo_path = PathBuf::from(format!("{}.config.json", artifact.display()));
        let body = serde_json::to_string_pretty(&echoed)
            .map_err(|e| CliError::config(format!("config serialization: {e}")))?;
        std::fs::write(&echo_path, body + "\n").map_err(|e| CliError::io(echo_path.clone(), e))?;
        Ok(echo_path)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut echoed = self.clone();
        echoed.seed = Some(self.resolved_seed());
        serde_json::to_string_pretty(&echoed)
            .map_err(|e| CliError::config(format!("config serialization: {e}")))
    }
}
