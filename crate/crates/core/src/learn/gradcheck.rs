//! Finite-difference verification of [`super::backward`].
//!
//! Each checked coordinate is compared against a central difference of
//! [`super::loss`], which runs through the inference path rather than the
//! training caches. Relative error is `|a - n| / max(|a|, |n|, floor)` with
//! `floor = 1e-6 · max(1, |loss|)`: below that magnitude the central
//! difference itself is dominated by rounding (`~1e-16 · loss / eps`).

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, loss, LearnError, TrainConfig};
use crate::datagen::{SampleSource, TrainSample};
use crate::geom::{PointSet, Vec2};
use crate::model::{init_params, ModelConfig, ModelParams};

/// N=6, m=3, k=8, H=4 with narrow layers everywhere.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_points: 6,
        m_frames: 3,
        point_mlp1: vec![8, 8],
        point_mlp2: vec![8, 8],
        k_global: 8,
        lstm_hidden: 4,
        lstm_layers: 3,
        use_input_transform: true,
        use_feature_transform: true,
        tnet_point_widths: vec![8, 8],
        tnet_fc_widths: vec![8],
        seed: 1,
    }
}

/// Test fixture: corrupts the analytic gradient before comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GradFault {
    /// Multiplies every analytic entry of the named parameter block by `factor`.
    ScaleBlock { block: String, factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// How many coordinates to check (all of them if the model is smaller).
    pub coordinates: usize,
    pub eps: f64,
    pub seed: u64,
    /// Uniform noise added to the initial parameters so that the zeroed
    /// T-net outputs and other special values do not hide gradient paths.
    pub perturb: f64,
    pub train: TrainConfig,
    pub fault: Option<GradFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { coordinates: 1000, eps: 1e-5, seed: 0, perturb: 0.1, train: TrainConfig::default(), fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradMismatch {
    pub index: usize,
    pub block: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub checked: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub tolerance: f64,
    /// Coordinates whose relative error exceeds the tolerance.
    pub failures: Vec<GradMismatch>,
    pub passed: bool,
}

pub fn grad_check(model_config: &ModelConfig, tolerance: f64) -> Result<GradCheckReport, LearnError> {
    grad_check_with(model_config, tolerance, &GradCheckOptions::default())
}

/// Points on a slowly drifting, wobbling ring, kept inside the unit square.
fn synthetic_sample(cfg: &ModelConfig, horizon: usize, rng: &mut ChaCha8Rng) -> TrainSample {
    let n = cfg.n_points;
    let phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let start = Vec2::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
    let vel = Vec2::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
    let frame = |t: usize| -> PointSet {
        let c = start + vel * t as f64;
        phase
            .iter()
            .map(|&a| {
                let r = 0.1 + 0.01 * (a * 3.0 + t as f64 * 0.5).sin();
                c + Vec2::from_angle(a) * r
            })
            .collect()
    };
    let m = cfg.m_frames;
    TrainSample {
        inputs: (0..m).map(frame).collect(),
        targets: (m..m + horizon).map(frame).collect(),
        source: SampleSource { trajectory: 0, start: 0 },
    }
}

/// Coordinates to check: a few from every block, the rest uniformly.
fn pick_indices(params: &ModelParams, want: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total = params.len();
    if want >= total {
        return (0..total).collect();
    }
    let mut chosen = std::collections::BTreeSet::new();
    for b in &params.layout().blocks {
        let len = b.range.len();
        for i in index::sample(rng, len, len.min(4)) {
            chosen.insert(b.range.start + i);
        }
    }
    while chosen.len() < want {
        chosen.insert(rng.gen_range(0..total));
    }
    chosen.into_iter().collect()
}

pub fn grad_check_with(
    model_config: &ModelConfig,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = init_params(model_config)?;
    params.flat_mut().iter_mut().for_each(|v| *v += rng.gen_range(-opts.perturb..=opts.perturb));
    let sample = synthetic_sample(model_config, opts.train.rollout_horizon, &mut rng);

    let (value, grads) = backward(&params, &sample, &opts.train)?;
    let mut analytic = grads.0;
    if let Some(GradFault::ScaleBlock { block, factor }) = &opts.fault {
        if let Some(b) = params.layout().block(block) {
            analytic[b.range.clone()].iter_mut().for_each(|g| *g *= factor);
        }
    }

    let floor = 1e-6 * value.abs().max(1.0);
    let indices = pick_indices(&params, opts.coordinates, &mut rng);
    let mut failures = Vec::new();
    let (mut max_rel, mut sum_rel) = (0.0f64, 0.0);
    for &i in &indices {
        let orig = params.flat()[i];
        params.flat_mut()[i] = orig + opts.eps;
        let plus = loss(&params, &sample, &opts.train)?;
        params.flat_mut()[i] = orig - opts.eps;
        let minus = loss(&params, &sample, &opts.train)?;
        params.flat_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
        if !(rel <= tolerance) {
            let block = params.layout().block_of(i).map_or_else(String::new, |b| b.name.clone());
            failures.push(GradMismatch { index: i, block, analytic: a, numeric, rel_error: rel });
        }
    }
    let checked = indices.len();
    Ok(GradCheckReport {
        param_count: params.len(),
        checked,
        loss: value,
        max_rel_error: max_rel,
        mean_rel_error: if checked == 0 { 0.0 } else { sum_rel / checked as f64 },
        tolerance,
        passed: failures.is_empty(),
        failures,
    })
}
