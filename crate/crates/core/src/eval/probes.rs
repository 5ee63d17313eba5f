use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geom::{PointSet, Vec2};
use crate::model::{forward, init_params, param_count, rollout, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub median_seconds: f64,
    pub mean_seconds: f64,
    /// Parameters plus the largest per-frame activation tensors, in bytes.
    pub peak_bytes_estimate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(median_seconds)` on `ln(n)`.
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// distinct points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn random_frames(n: usize, m: usize, seed: u64) -> Vec<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| (0..n).map(|_| Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect())
        .collect()
}

fn peak_bytes(cfg: &ModelConfig) -> usize {
    let widest = cfg.point_mlp1.iter().chain(&cfg.point_mlp2).copied().max().unwrap_or(2);
    let per_frame = cfg.n_points * widest;
    let lstm = cfg.k_global * cfg.m_frames * 4 * cfg.lstm_hidden;
    8 * (param_count(cfg) + per_frame + lstm)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Times one forward pass for each point count in `ns`, keeping every other
/// setting of `base`. `warmup` untimed passes precede the `repetitions`
/// timed ones.
pub fn scaling_probe(
    base: &ModelConfig,
    ns: &[usize],
    repetitions: usize,
    warmup: usize,
) -> Result<ScalingReport, EvalError> {
    if repetitions == 0 {
        return Ok(ScalingReport { rows: Vec::new(), slope: None });
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = ModelConfig { n_points: n, ..base.clone() };
        let params = init_params(&cfg)?;
        let frames = random_frames(n, cfg.m_frames, n as u64);
        for _ in 0..warmup {
            forward(&params, &frames)?;
        }
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            let out = forward(&params, &frames)?;
            times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let mean_seconds = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(ScalingRow {
            n,
            median_seconds: median(&mut times),
            mean_seconds,
            peak_bytes_estimate: peak_bytes(&cfg),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_seconds).collect();
    Ok(ScalingReport { slope: log_log_slope(&xs, &ys), rows })
}

const STEPS_PER_CALL: usize = 16;

/// Predicted frames per second of an autoregressive rollout that keeps
/// running for at least `seconds` of wall time (one call minimum).
pub fn throughput_probe(params: &ModelParams, frames: &[PointSet], seconds: f64) -> Result<f64, EvalError> {
    let m = params.config().m_frames;
    let mut window = frames.to_vec();
    let mut produced = 0usize;
    let start = Instant::now();
    loop {
        let preds = rollout(params, &window, STEPS_PER_CALL)?;
        produced += preds.len();
        window = preds[preds.len() - m..].to_vec();
        if start.elapsed().as_secs_f64() >= seconds {
            break;
        }
    }
    Ok(produced as f64 / start.elapsed().as_secs_f64())
}
