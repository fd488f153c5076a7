//! The training loop: deterministic batching, Adam updates, per-epoch
//! metrics appended to a CSV log, and a best-validation checkpoint.

use crate::batches::{batch_indices, epoch_seed};
use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::eval::evaluate_sequences;
use crate::feature_file::read_feature_file;
use ave_core::model::{Model, SequencePair};
use ave_core::optim::{train_step, Adam, AdamConfig};
use ave_core::rng;
use rand::RngCore;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    /// The model state at the end of the run (not necessarily the best one).
    pub final_model: Model,
}

/// Deterministic validation split: a seeded shuffle of the sequence indices,
/// first `fraction` share to validation. Used when no val file is given.
pub fn split_validation(
    sequences: Vec<SequencePair>,
    fraction: f64,
    seed: u64,
) -> (Vec<SequencePair>, Vec<SequencePair>) {
    let count = sequences.len();
    let val_count = ((count as f64) * fraction).round() as usize;
    let val_count = val_count.min(count.saturating_sub(1));
    let mut indices: Vec<usize> = (0..count).collect();
    let mut rng = rng::seeded(seed ^ 0xa5a5_5a5a_a5a5_5a5a);
    // Fisher-Yates via the shared helper so the split is stable.
    for i in 0..count.saturating_sub(1) {
        let j = i + (rng.next_u64() as usize) % (count - i);
        indices.swap(i, j);
    }
    let mut val_flags = vec![false; count];
    for &i in indices.iter().take(val_count) {
        val_flags[i] = true;
    }
    let mut train = Vec::with_capacity(count - val_count);
    let mut val = Vec::with_capacity(val_count);
    for (seq, is_val) in sequences.into_iter().zip(val_flags) {
        if is_val {
            val.push(seq);
        } else {
            train.push(seq);
        }
    }
    (train, val)
}

fn load_dataset(path: &Path, config: &RunConfig) -> Result<Vec<SequencePair>, CliError> {
    let sequences = read_feature_file(path, Some(config.class_count as u16))?;
    if let Some(first) = sequences.first() {
        if first.labels.len() != config.n {
            return Err(CliError::config(format!(
                "{}: sequences have {} segments, config n is {}",
                path.display(),
                first.labels.len(),
                config.n
            )));
        }
    }
    Ok(sequences)
}

/// Trains per the config; every input problem is reported before the first
/// optimizer step.
pub fn run_train(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    let model_config = config.model_config()?;
    let seed = config.resolved_seed();

    let train_path = config
        .train_path
        .as_ref()
        .ok_or_else(|| CliError::config("train_path is required"))?;
    let checkpoint_path = config
        .checkpoint_path
        .clone()
        .ok_or_else(|| CliError::config("checkpoint_path is required"))?;
    let log_path = config
        .log_path
        .clone()
        .ok_or_else(|| CliError::config("log_path is required"))?;

    let all_train = load_dataset(train_path, config)?;
    if all_train.is_empty() {
        return Err(CliError::config(format!(
            "{}: training file contains no sequences",
            train_path.display()
        )));
    }
    let (train_set, val_set) = match &config.val_path {
        Some(val_path) => {
            let val = load_dataset(val_path, config)?;
            if val.is_empty() {
                return Err(CliError::config(format!(
                    "{}: validation file contains no sequences",
                    val_path.display()
                )));
            }
            (all_train, val)
        }
        None => {
            let (train, val) = split_validation(all_train, config.val_fraction, seed);
            if train.is_empty() || val.is_empty() {
                return Err(CliError::config(
                    "validation split left an empty train or val set; \
                     adjust val_fraction or provide val_path",
                ));
            }
            (train, val)
        }
    };

    let mut model = Model::init(model_config, seed)?;
    let mut optimizer =
        Adam::for_model(AdamConfig::with_learning_rate(config.learning_rate), &model);

    config.write_echo(&log_path)?;
    config.write_echo(&checkpoint_path)?;
    let mut log = open_log(&log_path)?;

    let mut rows = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0;
    let mut best_val_acc = f64::NEG_INFINITY;

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut segments = 0;
        for batch in batch_indices(train_set.len(), config.batch_size, epoch_seed(seed, epoch))? {
            let refs: Vec<&SequencePair> = batch.iter().map(|&i| &train_set[i]).collect();
            let stats = train_step(&mut model, &mut optimizer, &refs)?;
            loss_sum += stats.loss * refs.len() as f64;
            correct += stats.correct;
            segments += stats.segments;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / segments as f64;
        let val = evaluate_sequences(&model, &val_set)?;
        let val_acc = val.accuracy();

        writeln!(log, "{epoch},{train_loss:.6},{train_acc:.6},{val_acc:.6}")
            .map_err(|e| CliError::io(log_path.clone(), e))?;
        rows.push(EpochRow {
            epoch,
            train_loss,
            train_acc,
            val_acc,
        });

        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            save_checkpoint(&checkpoint_path, config, &model)?;
        }
    }
    log.flush().map_err(|e| CliError::io(log_path.clone(), e))?;

    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_val_acc,
        checkpoint_path,
        log_path,
        final_model: model,
    })
}

fn open_log(path: &Path) -> Result<std::fs::File, CliError> {
    let exists = path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path.to_path_buf(), e))?;
    if !exists {
        writeln!(file, "epoch,train_loss,train_acc,val_acc")
            .map_err(|e| CliError::io(path.to_path_buf(), e))?;
    }
    Ok(file)
}
