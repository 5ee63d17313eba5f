//! Rollout evaluation at fixed horizons, the rigid constant-velocity
//! baseline, timing probes and rollout export.

mod export;
mod probes;

pub use export::{export_rollout, ExportSummary};
pub use probes::{log_log_slope, scaling_probe, throughput_probe, ScalingReport, ScalingRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{apply_ordering, normalize_frames, OrderingMethod, Trajectory};
use crate::geom::{PointSet, Vec2};
use crate::metrics::{centroid, position_error, shape_error, MetricsError};
use crate::model::{rollout_batch, ModelConfig, ModelError, ModelParams};
use crate::par::{self, ExecMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("need at least {needed} input frames, got {found}")]
    TooFewFrames { needed: usize, found: usize },
    #[error("no horizons requested")]
    NoHorizons,
    #[error("nothing to export")]
    EmptyPredictions,
    #[error("{predictions} predictions but only {truth} ground-truth frames")]
    TruthTooShort { predictions: usize, truth: usize },
}

/// One evaluation case: the window a predictor starts from.
#[derive(Debug, Clone, Copy)]
pub struct Case<'a> {
    /// Position of the trajectory in the evaluated corpus.
    pub index: usize,
    pub frames: &'a [PointSet],
}

/// Anything that can roll a window forward.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn model_config(&self) -> Option<ModelConfig> {
        None
    }
    fn rollout_cases(&self, cases: &[Case<'_>], steps: usize) -> Result<Vec<Vec<PointSet>>, EvalError>;
}

impl Predictor for ModelParams {
    fn name(&self) -> String {
        "tpnet".into()
    }

    fn model_config(&self) -> Option<ModelConfig> {
        Some(ModelParams::config(self).clone())
    }

    fn rollout_cases(&self, cases: &[Case<'_>], steps: usize) -> Result<Vec<Vec<PointSet>>, EvalError> {
        let windows: Vec<&[PointSet]> = cases.iter().map(|c| c.frames).collect();
        Ok(rollout_batch(self, &windows, steps)?)
    }
}

/// [`baseline_rigid`] as a [`Predictor`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RigidBaseline;

impl Predictor for RigidBaseline {
    fn name(&self) -> String {
        "baseline_rigid".into()
    }

    fn rollout_cases(&self, cases: &[Case<'_>], steps: usize) -> Result<Vec<Vec<PointSet>>, EvalError> {
        cases.iter().map(|c| baseline_rigid(c.frames, steps)).collect()
    }
}

/// Constant-velocity rigid translation of the last frame, using the
/// centroid displacement between the last two frames, clamped to the unit
/// square.
pub fn baseline_rigid(frames: &[PointSet], steps: usize) -> Result<Vec<PointSet>, EvalError> {
    if frames.len() < 2 {
        return Err(EvalError::TooFewFrames { needed: 2, found: frames.len() });
    }
    let last = &frames[frames.len() - 1];
    let velocity = centroid(last)? - centroid(&frames[frames.len() - 2])?;
    Ok((1..=steps)
        .map(|s| {
            let offset = velocity * s as f64;
            last.iter()
                .map(|&p| {
                    let q = p + offset;
                    Vec2::new(q.x.clamp(0.0, 1.0), q.y.clamp(0.0, 1.0))
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonErrors {
    pub horizon: usize,
    pub mean_position_error: f64,
    pub mean_shape_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingErrors {
    pub ordering: OrderingMethod,
    pub horizons: Vec<HorizonErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub model: String,
    pub model_config: Option<ModelConfig>,
    pub m: usize,
    /// Trajectories that entered the means.
    pub trajectories: usize,
    /// Trajectories too short for `m + max(horizons)` frames.
    pub skipped: usize,
    pub results: Vec<OrderingErrors>,
}

impl ErrorReport {
    pub fn errors(&self, ordering: OrderingMethod, horizon: usize) -> Option<&HorizonErrors> {
        self.results
            .iter()
            .find(|r| r.ordering == ordering)
            .and_then(|r| r.horizons.iter().find(|h| h.horizon == horizon))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-trajectory errors: `[horizon index] -> (E_p, E_s)`.
fn case_errors(truth: &[PointSet], preds: &[PointSet], m: usize, horizons: &[usize]) -> Result<Vec<(f64, f64)>, EvalError> {
    horizons
        .iter()
        .map(|&h| {
            let t = &truth[m + h - 1];
            let p = &preds[h - 1];
            Ok((position_error(t, p)?, shape_error(t, p)?))
        })
        .collect()
}

const CHUNK: usize = 8;

/// Evaluates `predictor` on every long-enough trajectory of `corpus`, once
/// per ordering. The input frames of each trajectory are reordered
/// independently per frame; ground truth is compared as point sets.
pub fn evaluate_with(
    predictor: &dyn Predictor,
    corpus: &[Trajectory],
    m: usize,
    horizons: &[usize],
    orderings: &[OrderingMethod],
    mode: ExecMode,
) -> Result<ErrorReport, EvalError> {
    let max_h = *horizons.iter().max().ok_or(EvalError::NoHorizons)?;
    if horizons.contains(&0) {
        return Err(EvalError::NoHorizons);
    }
    let kept: Vec<(usize, Vec<PointSet>)> = corpus
        .iter()
        .enumerate()
        .filter(|(_, t)| t.len() >= m + max_h)
        .map(|(i, t)| (i, normalize_frames(t)))
        .collect();
    let skipped = corpus.len() - kept.len();

    let mut results = Vec::with_capacity(orderings.len());
    for &ordering in orderings {
        let windows: Vec<Vec<PointSet>> = kept
            .iter()
            .map(|(i, frames)| {
                (0..m)
                    .map(|t| apply_ordering(&frames[t], ordering.for_stream((*i * m + t) as u64)))
                    .collect()
            })
            .collect();
        let chunks: Vec<usize> = (0..kept.len()).step_by(CHUNK).collect();
        let parts = par::map(mode, &chunks, |_, &start| -> Result<Vec<Vec<(f64, f64)>>, EvalError> {
            let end = (start + CHUNK).min(kept.len());
            let cases: Vec<Case<'_>> =
                (start..end).map(|j| Case { index: kept[j].0, frames: &windows[j] }).collect();
            let preds = predictor.rollout_cases(&cases, max_h)?;
            (start..end)
                .zip(&preds)
                .map(|(j, p)| case_errors(&kept[j].1, p, m, horizons))
                .collect()
        });
        let mut per_traj = Vec::with_capacity(kept.len());
        for p in parts {
            per_traj.extend(p?);
        }
        let count = per_traj.len().max(1) as f64;
        let horizons = horizons
            .iter()
            .enumerate()
            .map(|(hi, &h)| HorizonErrors {
                horizon: h,
                mean_position_error: per_traj.iter().map(|e| e[hi].0).sum::<f64>() / count,
                mean_shape_error: per_traj.iter().map(|e| e[hi].1).sum::<f64>() / count,
            })
            .collect();
        results.push(OrderingErrors { ordering, horizons });
    }
    Ok(ErrorReport {
        model: predictor.name(),
        model_config: predictor.model_config(),
        m,
        trajectories: kept.len(),
        skipped,
        results,
    })
}

/// [`evaluate_with`] for a trained model and a single ordering.
pub fn evaluate(
    params: &ModelParams,
    corpus: &[Trajectory],
    m: usize,
    horizons: &[usize],
    ordering: OrderingMethod,
) -> Result<ErrorReport, EvalError> {
    evaluate_with(params, corpus, m, horizons, &[ordering], ExecMode::default())
}
