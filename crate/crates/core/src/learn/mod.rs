//! Training: the weighted multi-step Chamfer loss, exact reverse-mode
//! gradients through the autoregressive rollout, Adam, and a
//! finite-difference gradient checker.
//!
//! The loss of a [`TrainSample`] rolls the model out for `rollout_horizon`
//! steps from its input frames, feeding every prediction back in, and sums
//! `w_i · chamfer(target_i, prediction_i)` with the unnormalized Chamfer
//! distance. Gradients flow through the whole recursion unless
//! [`TrainConfig::truncate_feedback`] is set.

mod adam;
mod backprop;
mod gradcheck;
mod train;

pub use adam::{adam_step, AdamState};
pub use backprop::{backward, batch_gradient, loss, weighted_chamfer};
pub use gradcheck::{grad_check, grad_check_with, tiny_config, GradCheckOptions, GradCheckReport, GradFault, GradMismatch};
pub use train::{train, write_log_csv, EpochStats, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{TrainSample, ROLLOUT_HORIZON};
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample has {found} target frames, expected {expected}")]
    Horizon { expected: usize, found: usize },
    #[error("no training samples")]
    NoSamples,
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rollout_horizon: usize,
    pub loss_weights: Vec<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Global-norm clipping threshold.
    pub grad_clip: Option<f64>,
    /// Weight of the feature-transform orthogonality penalty.
    pub ortho_weight: f64,
    /// Stop gradients from flowing back through fed-back predictions.
    pub truncate_feedback: bool,
    /// Fraction of samples held out for validation.
    pub validation_fraction: f64,
    /// Samples per gradient work unit. Fixed units give a fixed reduction
    /// order, so results do not depend on the execution mode.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut loss_weights = vec![1.0; ROLLOUT_HORIZON];
        loss_weights[0] = 9.0;
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            rollout_horizon: ROLLOUT_HORIZON,
            loss_weights,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip: None,
            ortho_weight: 0.0,
            truncate_feedback: false,
            validation_fraction: 0.1,
            chunk_size: 4,
        }
    }
}

impl TrainConfig {
    /// Full check used before training. Loss and gradient evaluation only
    /// need [`TrainConfig::check_weights_len`], so harnesses may use zero
    /// weights.
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::InvalidConfig(m));
        self.check_weights_len()?;
        if self.loss_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return bad("loss weights must be positive and finite".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.chunk_size == 0 {
            return bad("epochs, batch_size and chunk_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn check_weights_len(&self) -> Result<(), LearnError> {
        if self.rollout_horizon == 0 || self.loss_weights.len() != self.rollout_horizon {
            return Err(LearnError::InvalidConfig(format!(
                "{} loss weights for a horizon of {}",
                self.loss_weights.len(),
                self.rollout_horizon
            )));
        }
        Ok(())
    }

    pub(crate) fn check_sample(&self, sample: &TrainSample) -> Result<(), LearnError> {
        self.check_weights_len()?;
        if sample.horizon() != self.rollout_horizon {
            return Err(LearnError::Horizon { expected: self.rollout_horizon, found: sample.horizon() });
        }
        Ok(())
    }
}

/// Partial derivatives aligned with [`crate::model::ModelParams::flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer(pub Vec<f64>);

impl GradBuffer {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|g| !g.is_finite())
    }

    pub(crate) fn check_finite(self) -> Result<Self, LearnError> {
        match self.first_non_finite() {
            Some(index) => Err(LearnError::NonFiniteGradient { index }),
            None => Ok(self),
        }
    }

    /// Rescales to `max_norm` when the global norm exceeds it.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            let s = max_norm / n;
            self.0.iter_mut().for_each(|g| *g *= s);
        }
    }
}
