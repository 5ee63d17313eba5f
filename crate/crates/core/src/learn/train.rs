use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::backprop::{batch_gradient, losses_chunked};
use super::{LearnError, TrainConfig};
use crate::datagen::{derive_seed, TrainSample};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::par::ExecMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's batches, each taken before its update.
    pub train_loss: f64,
    /// Mean loss on the held-out split after the epoch; absent when it is empty.
    pub val_loss: Option<f64>,
    /// Seconds since training started.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss (training
    /// loss when there is no validation split).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Seeded partition into (train, validation) index lists.
fn split(len: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)));
    let n_val = ((len as f64 * cfg.validation_fraction).round() as usize).min(len.saturating_sub(1));
    let val = idx.split_off(len - n_val);
    (idx, val)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn train(
    cfg: &TrainConfig,
    samples: &[TrainSample],
    model_config: &ModelConfig,
    mode: ExecMode,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LearnError::NoSamples);
    }
    let mut params = init_params(model_config)?;
    let mut adam = AdamState::new(params.len());
    let (mut train_idx, val_idx) = split(samples.len(), cfg);
    let val: Vec<&TrainSample> = val_idx.iter().map(|&i| &samples[i]).collect();

    let started = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        let mut epoch_losses = Vec::with_capacity(train_idx.len());
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (losses, mut grads) = match batch_gradient(&params, &batch, cfg, mode) {
                Err(LearnError::NonFiniteGradient { .. }) => return Err(LearnError::NonFiniteLoss { epoch, batch: b }),
                r => r?,
            };
            if !losses.iter().all(|l| l.is_finite()) {
                return Err(LearnError::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(c) = cfg.grad_clip {
                grads.clip_norm(c);
            }
            adam_step(params.flat_mut(), &grads.0, &mut adam, cfg);
            epoch_losses.extend(losses);
        }
        let train_loss = mean(&epoch_losses);
        let val_loss = if val.is_empty() {
            None
        } else {
            let l = losses_chunked(&params, &val, cfg, mode)?;
            Some(mean(&l))
        };
        let stats = EpochStats { epoch, train_loss, val_loss, wall_seconds: started.elapsed().as_secs_f64() };
        progress(&stats);
        history.push(stats);

        let score = val_loss.unwrap_or(train_loss);
        if score.is_finite() && best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs, params),
    };
    Ok(TrainOutcome { params, best_epoch, history })
}

/// CSV with columns `epoch,train_loss,val_loss,wall_seconds`; an empty
/// `val_loss` field means no validation split.
pub fn write_log_csv(path: &Path, history: &[EpochStats]) -> Result<(), std::io::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "wall_seconds"])?;
    for s in history {
        w.write_record([
            s.epoch.to_string(),
            s.train_loss.to_string(),
            s.val_loss.map_or_else(String::new, |v| v.to_string()),
            format!("{:.3}", s.wall_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}
