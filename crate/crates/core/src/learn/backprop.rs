//! Loss evaluation and reverse-mode gradients.
//!
//! A chunk of samples is rolled out in lockstep with every intermediate kept.
//! Frame features are indexed on one timeline: slots `0..m` are the input
//! frames, slot `m + s` is the extraction of prediction `s`. Step `s` reads
//! slots `s..s + m`. The backward pass walks the steps in reverse; by the time
//! step `s` is visited, every step that read slot `m + s` has already pushed
//! its gradient there, so the extraction of prediction `s` can be
//! back-propagated into that prediction before the step itself.

use ndarray::{Array2, ArrayView2};

use super::{GradBuffer, LearnError, TrainConfig};
use crate::datagen::TrainSample;
use crate::geom::PointSet;
use crate::metrics::{chamfer, chamfer_grad_q, chamfer_match};
use crate::model::extractor::{extract_backward, extract_forward, extract_forward_stacked, ExtractCache};
use crate::model::predictor::{predict_backward, predict_forward, PredictCache, ReadoutAccum};
use crate::model::{rollout_batch, ModelError, ModelParams};
use crate::par::{self, ExecMode};

fn check_inputs(params: &ModelParams, sample: &TrainSample) -> Result<(), LearnError> {
    let cfg = params.config();
    if sample.m() != cfg.m_frames {
        return Err(ModelError::WrongFrameCount { expected: cfg.m_frames, found: sample.m() }.into());
    }
    if let Some(f) = sample.inputs.iter().find(|f| f.len() != cfg.n_points) {
        return Err(ModelError::WrongPointCount { expected: cfg.n_points, found: f.len() }.into());
    }
    Ok(())
}

/// `sum_i w_i · chamfer(targets_i, predictions_i)`.
pub fn weighted_chamfer(targets: &[PointSet], predictions: &[PointSet], weights: &[f64]) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for ((w, t), q) in weights.iter().zip(targets).zip(predictions) {
        total += w * chamfer(t, q)?;
    }
    Ok(total)
}

/// Weighted multi-step Chamfer loss of one sample, computed through the
/// public inference path.
pub fn loss(params: &ModelParams, sample: &TrainSample, cfg: &TrainConfig) -> Result<f64, LearnError> {
    Ok(batch_losses(params, &[sample], cfg)?[0])
}

/// Per-sample losses of a batch, without gradients.
pub(crate) fn batch_losses(params: &ModelParams, samples: &[&TrainSample], cfg: &TrainConfig) -> Result<Vec<f64>, LearnError> {
    for s in samples {
        cfg.check_sample(s)?;
    }
    let windows: Vec<&[PointSet]> = samples.iter().map(|s| s.inputs.as_slice()).collect();
    let preds = rollout_batch(params, &windows, cfg.rollout_horizon)?;
    samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| {
            let mut total = weighted_chamfer(&s.targets, p, &cfg.loss_weights)?;
            if cfg.ortho_weight != 0.0 {
                let fed_back = &p[..p.len() - 1];
                for f in s.inputs.iter().chain(fed_back) {
                    total += cfg.ortho_weight * extract_forward(params, &[f]).orthogonality_penalty();
                }
            }
            Ok(total)
        })
        .collect()
}

/// Per-sample losses of `samples` evaluated in chunks, possibly in parallel.
pub(crate) fn losses_chunked(
    params: &ModelParams,
    samples: &[&TrainSample],
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<Vec<f64>, LearnError> {
    let chunks: Vec<&[&TrainSample]> = samples.chunks(cfg.chunk_size.max(1)).collect();
    let parts = par::map(mode, &chunks, |_, c| batch_losses(params, c, cfg));
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Loss and summed parameter gradient of one chunk.
pub(crate) fn chunk_backward(
    params: &ModelParams,
    samples: &[&TrainSample],
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    for s in samples {
        cfg.check_sample(s)?;
        check_inputs(params, s)?;
    }
    let m = params.config().m_frames;
    let n = params.config().n_points;
    let horizon = cfg.rollout_horizon;
    let batch = samples.len();
    let mut grads = vec![0.0; params.len()];

    let mut ext: Vec<ExtractCache> = (0..m)
        .map(|t| {
            let frames: Vec<&PointSet> = samples.iter().map(|s| &s.inputs[t]).collect();
            extract_forward(params, &frames)
        })
        .collect();
    let mut feats: Vec<Array2<f64>> = ext.iter().map(|c| c.features().clone()).collect();
    let mut preds: Vec<Array2<f64>> = Vec::with_capacity(horizon);
    let mut pcaches: Vec<PredictCache> = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let views: Vec<ArrayView2<f64>> = feats[s..s + m].iter().map(|f| f.view()).collect();
        let (out, pc) = predict_forward(params, &views);
        if s + 1 < horizon {
            let stacked = out.clone().into_shape_with_order((batch * n, 2)).expect("point rows");
            let c = extract_forward_stacked(params, stacked, batch);
            feats.push(c.features().clone());
            ext.push(c);
        }
        preds.push(out);
        pcaches.push(pc);
    }

    let mut losses = vec![0.0; batch];
    let mut d_out: Vec<Array2<f64>> = Vec::with_capacity(horizon);
    for (s, out) in preds.iter().enumerate() {
        let w = cfg.loss_weights[s];
        let mut d = Array2::zeros((batch, 2 * n));
        for (b, sample) in samples.iter().enumerate() {
            let q = PointSet::from_flat(out.row(b).as_slice().expect("contiguous row"));
            let target = &sample.targets[s];
            let mm = chamfer_match(target.points(), q.points())?;
            losses[b] += w * mm.value;
            if w != 0.0 {
                let g = chamfer_grad_q(target.points(), q.points(), &mm);
                d.row_mut(b).iter_mut().zip(g).for_each(|(d, g)| *d = w * g);
            }
        }
        d_out.push(d);
    }
    if cfg.ortho_weight != 0.0 {
        for c in &ext {
            for (b, l) in losses.iter_mut().enumerate() {
                *l += cfg.ortho_weight * c.orthogonality_penalty_of(b);
            }
        }
    }

    let k = params.config().k_global;
    let mut d_feats: Vec<Array2<f64>> = (0..m + horizon - 1).map(|_| Array2::zeros((batch, k))).collect();
    let mut acc = ReadoutAccum::default();
    for s in (0..horizon).rev() {
        let mut dout = d_out.pop().expect("one gradient per step");
        if s + 1 < horizon {
            let cache = ext.pop().expect("extraction of prediction s");
            let dg = std::mem::replace(&mut d_feats[m + s], Array2::zeros((0, 0)));
            let need_dx = !cfg.truncate_feedback;
            if let Some(dx) = extract_backward(&cache, dg, params, &mut grads, cfg.ortho_weight, need_dx) {
                dout += &dx.into_shape_with_order((batch, 2 * n)).expect("flat points");
            }
        }
        let pc = pcaches.pop().expect("one cache per step");
        let dfs = predict_backward(&pc, dout, params, &mut grads, &mut acc);
        for (t, d) in dfs.into_iter().enumerate() {
            d_feats[s + t] += &d;
        }
    }
    for t in (0..m).rev() {
        let cache = ext.pop().expect("input extraction");
        let dg = std::mem::replace(&mut d_feats[t], Array2::zeros((0, 0)));
        extract_backward(&cache, dg, params, &mut grads, cfg.ortho_weight, false);
    }
    acc.flush(params, &mut grads);
    Ok((losses, grads))
}

/// Loss and exact gradient for one sample.
pub fn backward(params: &ModelParams, sample: &TrainSample, cfg: &TrainConfig) -> Result<(f64, GradBuffer), LearnError> {
    let (losses, grads) = chunk_backward(params, &[sample], cfg)?;
    Ok((losses[0], GradBuffer(grads).check_finite()?))
}

/// Per-sample losses and the batch-mean gradient. Chunks of
/// `cfg.chunk_size` samples are the unit of parallel work and are reduced in
/// order, so the result is the same in every [`ExecMode`].
pub fn batch_gradient(
    params: &ModelParams,
    samples: &[&TrainSample],
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<(Vec<f64>, GradBuffer), LearnError> {
    if samples.is_empty() {
        return Err(LearnError::NoSamples);
    }
    let chunks: Vec<&[&TrainSample]> = samples.chunks(cfg.chunk_size.max(1)).collect();
    let parts = par::map(mode, &chunks, |_, c| chunk_backward(params, c, cfg));
    let mut losses = Vec::with_capacity(samples.len());
    let mut total = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        losses.extend(l);
        total.iter_mut().zip(g).for_each(|(t, g)| *t += g);
    }
    let scale = 1.0 / samples.len() as f64;
    total.iter_mut().for_each(|g| *g *= scale);
    Ok((losses, GradBuffer(total).check_finite()?))
}
