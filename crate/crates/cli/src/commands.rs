//! Subcommand argument structs and implementations.

use crate::checkpoint::load_checkpoint;
use crate::config::{CoattentionModeName, EarlyFusionName, FusionStrategyName, RunConfig};
use crate::error::CliError;
use crate::eval::{evaluate_sequences, write_confusion_csv};
use crate::exit;
use crate::feature_file::{read_feature_file, write_feature_file};
use crate::heatmap::dump_attention;
use crate::synth::{generate, SyntheticSpec};
use crate::train::run_train;
use ave_core::gradcheck::{grad_check, GradCheckOptions};
use ave_core::model::{Model, SequencePair};
use ave_core::rng;
use ave_core::tensor::Tensor;
use ave_core::{RAW_AUDIO_DIM, VISUAL_CHANNELS, VISUAL_POSITIONS};
use clap::Args;
use std::path::PathBuf;
use std::time::Instant;

/// Flag-level overrides applied on top of the JSON config; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// Segments per sequence (N).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    #[arg(long)]
    pub d_v: Option<usize>,
    /// Attention-map row count (k).
    #[arg(long)]
    pub k: Option<usize>,
    /// Joint co-attention recursion depth.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum)]
    pub fusion_strategy: Option<FusionStrategyName>,
    #[arg(long)]
    pub residual_embedding: Option<bool>,
    #[arg(long, value_enum)]
    pub coattention_mode: Option<CoattentionModeName>,
    #[arg(long, value_enum)]
    pub early_fusion: Option<EarlyFusionName>,
    /// Total classes including the background.
    #[arg(long)]
    pub class_count: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut config: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { config.$target = v; })*
            };
        }
        set! {
            n => n, d_a => d_a, d_v => d_v, k => k, depth => depth,
            fusion_strategy => fusion_strategy,
            residual_embedding => residual_embedding,
            coattention_mode => coattention_mode,
            early_fusion => early_fusion,
            class_count => class_count,
            learning_rate => learning_rate,
            epochs => epochs,
            batch_size => batch_size,
            val_fraction => val_fraction,
        }
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        if self.train.is_some() {
            config.train_path = self.train.clone();
        }
        if self.val.is_some() {
            config.val_path = self.val.clone();
        }
        if self.test.is_some() {
            config.test_path = self.test.clone();
        }
        if self.checkpoint.is_some() {
            config.checkpoint_path = self.checkpoint.clone();
        }
        if self.log.is_some() {
            config.log_path = self.log.clone();
        }
        config
    }
}

pub fn load_base_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output feature file.
    #[arg(long)]
    pub out: PathBuf,
    /// Event classes (the file additionally uses one background class).
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long = "per-class", default_value_t = 64)]
    pub per_class: usize,
    /// Segments per sequence.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long = "background-rate", default_value_t = 0.2)]
    pub background_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_synth(args: &SynthArgs) -> Result<i32, CliError> {
    let seed = args.seed.or_else(env_seed).unwrap_or(0);
    let spec = SyntheticSpec {
        classes: args.classes,
        sequences_per_class: args.per_class,
        segments: args.n,
        background_rate: args.background_rate,
        noise_sigma: args.sigma,
        seed,
    };
    let sequences = generate(&spec)?;
    write_feature_file(&args.out, &sequences)?;

    let mut per_class = vec![0usize; spec.class_count()];
    let mut segment_count = 0usize;
    let mut background_segments = 0usize;
    for seq in &sequences {
        for &label in &seq.labels {
            segment_count += 1;
            if label == spec.background_label() {
                background_segments += 1;
            }
        }
        per_class[*seq
            .labels
            .iter()
            .find(|&&l| l != spec.background_label())
            .unwrap_or(&spec.background_label()) as usize] += 1;
    }
    println!(
        "wrote {} sequences ({segment_count} segments) to {}",
        sequences.len(),
        args.out.display()
    );
    for (class, count) in per_class.iter().enumerate().take(spec.classes) {
        println!("class {class}: {count} sequences");
    }
    println!(
        "background fraction: {:.4} (rate {:.4})",
        background_segments as f64 / segment_count as f64,
        spec.background_rate
    );
    Ok(exit::SUCCESS)
}

fn env_seed() -> Option<u64> {
    std::env::var("AVE_SEED").ok().and_then(|v| v.parse().ok())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

pub fn run_train_cmd(args: &TrainArgs) -> Result<i32, CliError> {
    let config = args.overrides.apply(load_base_config(&args.config)?);
    let started = Instant::now();
    let outcome = run_train(&config)?;
    if let Some(last) = outcome.rows.last() {
        println!(
            "trained {} epochs in {:.1}s: train_loss {:.6}, train_acc {:.4}, val_acc {:.4}",
            outcome.rows.len(),
            started.elapsed().as_secs_f64(),
            last.train_loss,
            last.train_acc,
            last.val_acc
        );
    }
    println!(
        "best val_acc {:.4} at epoch {}; checkpoint {}, log {}",
        outcome.best_val_acc,
        outcome.best_epoch,
        outcome.checkpoint_path.display(),
        outcome.log_path.display()
    );
    Ok(exit::SUCCESS)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature file to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Confusion-matrix CSV output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_eval(args: &EvalArgs) -> Result<i32, CliError> {
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    let sequences = read_feature_file(&args.data, Some(config.class_count as u16))?;
    if let Some(first) = sequences.first() {
        if first.labels.len() != config.n {
            return Err(CliError::config(format!(
                "checkpoint expects {} segments per sequence, {} has {}",
                config.n,
                args.data.display(),
                first.labels.len()
            )));
        }
    }
    let result = evaluate_sequences(&model, &sequences)?;
    write_confusion_csv(&args.out, &result)?;
    config.write_echo(&args.out)?;

    println!(
        "segment accuracy: {:.4} ({}/{})",
        result.accuracy(),
        result.hits,
        result.segments
    );
    for (class, acc) in result.per_class_accuracy().iter().enumerate() {
        match acc {
            Some(acc) => println!("class {class}: {acc:.4}"),
            None => println!("class {class}: no segments"),
        }
    }
    println!("confusion matrix written to {}", args.out.display());
    Ok(exit::SUCCESS)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Elements checked per parameter block (0 = every element).
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    /// Negative-control fixture: corrupt the recorded gradient rule so the
    /// check must fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

/// Defaults for the verification command: a toy geometry small enough for
/// exhaustive finite differences.
pub fn gradcheck_default_config() -> RunConfig {
    RunConfig {
        n: 4,
        d_a: 8,
        d_v: 8,
        k: 4,
        depth: 3,
        fusion_strategy: FusionStrategyName::ConcatenationFc,
        ..RunConfig::default()
    }
}

pub fn random_check_sequence(segments: usize, classes: usize, seed: u64) -> SequencePair {
    let mut r = rng::seeded(seed);
    SequencePair {
        audio: rng::uniform_tensor(&mut r, &[segments, RAW_AUDIO_DIM], 1.0),
        visual: (0..segments)
            .map(|_| rng::uniform_tensor(&mut r, &[VISUAL_POSITIONS, VISUAL_CHANNELS], 1.0))
            .collect(),
        labels: (0..segments)
            .map(|_| (rng::unit_f64(&mut r) * classes as f64) as u8)
            .collect(),
    }
}

pub fn run_gradcheck(args: &GradcheckArgs) -> Result<i32, CliError> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => gradcheck_default_config(),
    };
    let config = args.overrides.apply(base);
    if config.n > 6 || config.d_a > 16 || config.d_v > 16 {
        return Err(CliError::config(format!(
            "finite differences need toy dimensions (n <= 6, d_a/d_v <= 16); \
             got n={}, d_a={}, d_v={}",
            config.n, config.d_a, config.d_v
        )));
    }
    let model_config = config.model_config()?;
    let seed = config.resolved_seed();
    let model = Model::init(model_config, seed)?;
    let sequence = random_check_sequence(config.n, config.class_count, seed.wrapping_add(1));
    let targets = ave_core::head::one_hot(&sequence.labels, config.class_count)?;

    let inputs: Vec<(String, Tensor)> = model
        .visit()
        .into_iter()
        .map(|(name, t)| (name, t.clone()))
        .collect();
    let named: Vec<(&str, Tensor)> = inputs
        .iter()
        .map(|(name, t)| (name.as_str(), t.clone()))
        .collect();
    let options = GradCheckOptions {
        max_checks_per_input: (args.samples > 0).then_some(args.samples),
        seed,
        ..GradCheckOptions::default()
    };

    let started = Instant::now();
    let corrupt = args.corrupt;
    let report = grad_check(
        move |tape, vars| {
            let mv = model.vars_from(tape, vars)?;
            let out = model.forward(tape, &mv, &sequence, false)?;
            let loss = tape.mlsm_loss(out.scores, &targets, false)?;
            if corrupt {
                return tape.debug_misgrad(loss);
            }
            Ok(loss)
        },
        &named,
        &options,
    )?;

    println!(
        "{:<24} {:>8} {:>9} {:>13}",
        "block", "checked", "excluded", "max_rel_err"
    );
    for input in &report.inputs {
        println!(
            "{:<24} {:>8} {:>9} {:>13.3e}",
            input.name, input.checked, input.excluded, input.max_rel_err
        );
    }
    let verdict = if report.pass() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: max relative error {:.3e} (tolerance {:.1e}, step 1e-5) in {:.1}s",
        report.max_rel_err(),
        report.tol,
        started.elapsed().as_secs_f64()
    );
    Ok(if report.pass() {
        exit::SUCCESS
    } else {
        exit::VERIFICATION_FAILURE
    })
}

// ---------------------------------------------------------------------------
// params
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Also print totals for depths 1..=5 with the per-layer increment.
    #[arg(long)]
    pub sweep: bool,
    /// Also print totals for all six fusion strategies.
    #[arg(long)]
    pub strategies: bool,
}

pub fn run_params(args: &ParamsArgs) -> Result<i32, CliError> {
    let config = args.overrides.apply(load_base_config(&args.config)?);
    let model = Model::zeros(config.model_config()?)?;

    println!("{:<16} {:>12}", "module", "parameters");
    for (module, count) in model.param_count_by_module() {
        println!("{module:<16} {count:>12}");
    }
    let total = model.param_count();
    println!(
        "{:<16} {:>12} ({:.2}e6)",
        "total",
        total,
        total as f64 / 1e6
    );

    if args.sweep {
        println!();
        println!("{:>5} {:>12} {:>12}", "depth", "total", "increment");
        let mut previous = None;
        for depth in 1..=5 {
            let mut swept = config.clone();
            swept.depth = depth;
            let count = Model::zeros(swept.model_config()?)?.param_count();
            match previous {
                Some(prev) => println!("{depth:>5} {count:>12} {:>12}", count - prev),
                None => println!("{depth:>5} {count:>12} {:>12}", "-"),
            }
            previous = Some(count);
        }
    }

    if args.strategies {
        println!();
        println!("{:<20} {:>12}", "strategy", "total");
        for strategy in FusionStrategyName::ALL {
            let mut swept = config.clone();
            swept.fusion_strategy = strategy;
            if matches!(
                strategy,
                FusionStrategyName::Addition
                    | FusionStrategyName::Multiplication
                    | FusionStrategyName::AdditionFc
                    | FusionStrategyName::MultiplicationFc
            ) && swept.d_a != swept.d_v
            {
                println!("{:<20} {:>12}", strategy.label(), "n/a (d_a != d_v)");
                continue;
            }
            let count = Model::zeros(swept.model_config()?)?.param_count();
            println!("{:<20} {:>12}", strategy.label(), count);
        }
    }
    Ok(exit::SUCCESS)
}

// ---------------------------------------------------------------------------
// attend
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence index within the feature file.
    #[arg(long, default_value_t = 0)]
    pub sequence: usize,
    /// Output directory for the per-segment CSV and PGM files.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

pub fn run_attend(args: &AttendArgs) -> Result<i32, CliError> {
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    let sequences = read_feature_file(&args.data, Some(config.class_count as u16))?;
    let files = dump_attention(&model, &sequences, args.sequence, &args.out_dir)?;

    let echo_path = args.out_dir.join("config.json");
    std::fs::write(&echo_path, config.to_json()? + "\n").map_err(|e| CliError::io(echo_path, e))?;

    println!(
        "wrote {} heatmaps for sequence {} to {}",
        files.csv.len(),
        args.sequence,
        args.out_dir.display()
    );
    Ok(exit::SUCCESS)
}
