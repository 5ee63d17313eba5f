//! The point-set sequence predictor.
//!
//! Each of the `m` input frames goes through the same feature extractor
//! (input transform, per-point MLP, feature transform, per-point MLP, max
//! pool, refinement layer), producing `k` global features whose positions
//! are aligned across frames. The predictor runs one weight-shared
//! bidirectional LSTM per feature channel over the `m` time steps, then a
//! fully-connected readout emits the `N × 2` next point set.

mod checkpoint;
pub(crate) mod extractor;
pub(crate) mod layers;
pub mod layout;
pub(crate) mod predictor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use layout::Layout;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::PointSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("frame has {found} points, model expects {expected}")]
    WrongPointCount { expected: usize, found: usize },
    #[error("got {found} frames, model expects {expected}")]
    WrongFrameCount { expected: usize, found: usize },
    #[error("feature vector has length {found}, model expects {expected}")]
    WrongFeatureLength { expected: usize, found: usize },
    #[error("parameter vector has length {found}, config needs {expected}")]
    WrongParamCount { expected: usize, found: usize },
    #[error("rollout needs at least one step")]
    NoSteps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_points: usize,
    pub m_frames: usize,
    pub point_mlp1: Vec<usize>,
    pub point_mlp2: Vec<usize>,
    pub k_global: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub use_input_transform: bool,
    pub use_feature_transform: bool,
    /// Per-point widths inside both T-nets, before their max pool.
    pub tnet_point_widths: Vec<usize>,
    /// Fully-connected widths inside both T-nets, after their max pool.
    pub tnet_fc_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 30,
            m_frames: 5,
            point_mlp1: vec![64, 64],
            point_mlp2: vec![64, 128, 256],
            k_global: 256,
            lstm_hidden: 32,
            lstm_layers: 3,
            use_input_transform: true,
            use_feature_transform: true,
            tnet_point_widths: vec![32, 64],
            tnet_fc_widths: vec![32],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(3..=5).contains(&self.m_frames) {
            return bad(format!("m_frames must be 3, 4 or 5 (got {})", self.m_frames));
        }
        if self.n_points == 0 {
            return bad("n_points must be >= 1".into());
        }
        if self.point_mlp1.is_empty() || self.point_mlp2.is_empty() {
            return bad("both point MLPs need at least one layer".into());
        }
        let all = self
            .point_mlp1
            .iter()
            .chain(&self.point_mlp2)
            .chain(&self.tnet_point_widths)
            .chain(&self.tnet_fc_widths);
        if all.clone().any(|&w| w == 0) || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return bad("all widths must be >= 1".into());
        }
        if self.point_mlp2.last() != Some(&self.k_global) {
            return bad(format!(
                "k_global ({}) must equal the last width of point_mlp2 ({:?})",
                self.k_global,
                self.point_mlp2.last()
            ));
        }
        Ok(())
    }

    /// Feature dimension entering the feature transform.
    pub fn feature_dim(&self) -> usize {
        *self.point_mlp1.last().unwrap_or(&2)
    }
}

/// Closed-form parameter count from layer shapes.
pub fn param_count(cfg: &ModelConfig) -> usize {
    fn stack(input: usize, widths: &[usize]) -> (usize, usize) {
        widths.iter().fold((0, input), |(total, prev), &w| (total + prev * w + w, w))
    }
    fn tnet(dim: usize, point: &[usize], fc: &[usize]) -> usize {
        let (a, pooled) = stack(dim, point);
        let (b, last) = stack(pooled, fc);
        a + b + last * dim * dim + dim * dim
    }
    let d = cfg.feature_dim();
    let k = cfg.k_global;
    let h = cfg.lstm_hidden;
    let mut total = 0;
    if cfg.use_input_transform {
        total += tnet(2, &cfg.tnet_point_widths, &cfg.tnet_fc_widths);
    }
    total += stack(2, &cfg.point_mlp1).0;
    if cfg.use_feature_transform {
        total += tnet(d, &cfg.tnet_point_widths, &cfg.tnet_fc_widths);
    }
    total += stack(d, &cfg.point_mlp2).0;
    total += k * k + k;
    for l in 0..cfg.lstm_layers {
        let input = if l == 0 { 1 } else { 2 * h };
        total += 2 * (input * 4 * h + h * 4 * h + 4 * h);
    }
    total += cfg.lstm_layers.saturating_sub(1) * 4 * h;
    total += (k * cfg.m_frames * 2 * h) * (2 * cfg.n_points) + 2 * cfg.n_points;
    total
}

/// All learnable values plus the layout that gives them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(ModelError::WrongParamCount { expected: layout.total, found: values.len() });
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Seeded initialization: Glorot-uniform weights, zero biases, T-net output
/// layers zeroed so both transforms start as the identity, LSTM forget-gate
/// bias 1, layer-norm scale 1.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut glorot = |values: &mut [f64], offset: usize, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[offset..offset + fan_in * fan_out] {
            *v = rng.gen_range(-limit..limit);
        }
    };

    let tnets = [&layout.input_tnet, &layout.feature_tnet];
    for t in tnets.into_iter().flatten() {
        for d in t.point.iter().chain(&t.fc) {
            glorot(&mut values, d.w, d.fan_in, d.fan_out);
        }
    }
    for d in layout.mlp1.iter().chain(&layout.mlp2).chain([&layout.refine, &layout.readout]) {
        glorot(&mut values, d.w, d.fan_in, d.fan_out);
    }
    for pair in &layout.lstm {
        for dir in pair {
            let h = dir.hidden;
            glorot(&mut values, dir.w_ih, dir.input, 4 * h);
            glorot(&mut values, dir.w_hh, h, 4 * h);
            values[dir.b + h..dir.b + 2 * h].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    for ln in &layout.norms {
        values[ln.gamma..ln.gamma + ln.dim].iter_mut().for_each(|v| *v = 1.0);
    }
    Ok(ModelParams { config: config.clone(), layout, values })
}

/// Global features of one frame; position `j` always holds feature `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatures(pub Vec<f64>);

impl GlobalFeatures {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_frame(params: &ModelParams, frame: &PointSet) -> Result<(), ModelError> {
    let expected = params.config.n_points;
    if frame.len() != expected {
        return Err(ModelError::WrongPointCount { expected, found: frame.len() });
    }
    Ok(())
}

fn check_window(params: &ModelParams, frames: &[PointSet]) -> Result<(), ModelError> {
    let expected = params.config.m_frames;
    if frames.len() != expected {
        return Err(ModelError::WrongFrameCount { expected, found: frames.len() });
    }
    frames.iter().try_for_each(|f| check_frame(params, f))
}

/// The `2 × 2` matrix the input transform applies to `frame` (identity when
/// the transform is disabled). Points are row vectors: `p' = p · T`.
pub fn input_transform(params: &ModelParams, frame: &PointSet) -> Result<[[f64; 2]; 2], ModelError> {
    check_frame(params, frame)?;
    let cache = extractor::extract_forward(params, &[frame]);
    Ok(match &cache.input_t {
        Some(t) => {
            let m = &t.transforms[0];
            [[m[[0, 0]], m[[0, 1]]], [m[[1, 0]], m[[1, 1]]]]
        }
        None => [[1.0, 0.0], [0.0, 1.0]],
    })
}

pub fn extract_features(params: &ModelParams, frame: &PointSet) -> Result<GlobalFeatures, ModelError> {
    check_frame(params, frame)?;
    let cache = extractor::extract_forward(params, &[frame]);
    Ok(GlobalFeatures(extractor::row_vec(cache.features(), 0)))
}

pub fn predict_next(params: &ModelParams, features: &[GlobalFeatures]) -> Result<PointSet, ModelError> {
    let (m, k) = (params.config.m_frames, params.config.k_global);
    if features.len() != m {
        return Err(ModelError::WrongFrameCount { expected: m, found: features.len() });
    }
    if let Some(f) = features.iter().find(|f| f.len() != k) {
        return Err(ModelError::WrongFeatureLength { expected: k, found: f.len() });
    }
    let mats: Vec<Array2<f64>> = features
        .iter()
        .map(|f| Array2::from_shape_vec((1, k), f.0.clone()).expect("row"))
        .collect();
    let views: Vec<ArrayView2<f64>> = mats.iter().map(|m| m.view()).collect();
    let (out, _) = predictor::predict_forward(params, &views);
    Ok(PointSet::from_flat(out.row(0).as_slice().expect("contiguous row")))
}

pub fn forward(params: &ModelParams, frames: &[PointSet]) -> Result<PointSet, ModelError> {
    Ok(rollout(params, frames, 1)?.remove(0))
}

/// Autoregressive prediction: each output is appended to the window and the
/// oldest frame dropped.
pub fn rollout(params: &ModelParams, frames: &[PointSet], steps: usize) -> Result<Vec<PointSet>, ModelError> {
    Ok(rollout_batch(params, &[frames], steps)?.remove(0))
}

/// Rolls out several windows in lockstep; output `i` belongs to window `i`.
pub fn rollout_batch(params: &ModelParams, windows: &[&[PointSet]], steps: usize) -> Result<Vec<Vec<PointSet>>, ModelError> {
    rollout_batch_observed(params, windows, steps, |_, _| {})
}

/// Like [`rollout_batch`], calling `observe(step, window_features)` with the
/// `B × k` feature matrices of the window used at each step.
pub fn rollout_batch_observed(
    params: &ModelParams,
    windows: &[&[PointSet]],
    steps: usize,
    mut observe: impl FnMut(usize, &[Array2<f64>]),
) -> Result<Vec<Vec<PointSet>>, ModelError> {
    if steps == 0 {
        return Err(ModelError::NoSteps);
    }
    windows.iter().try_for_each(|w| check_window(params, w))?;
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let m = params.config.m_frames;
    let batch = windows.len();

    // feats[t] is B × k for window slot t.
    let mut feats: Vec<Array2<f64>> = (0..m)
        .map(|t| {
            let frames: Vec<&PointSet> = windows.iter().map(|w| &w[t]).collect();
            extractor::extract_forward(params, &frames).features().clone()
        })
        .collect();
    let mut outputs: Vec<Vec<PointSet>> = vec![Vec::with_capacity(steps); batch];
    for s in 0..steps {
        observe(s, &feats);
        let views: Vec<ArrayView2<f64>> = feats.iter().map(|f| f.view()).collect();
        let (out, _) = predictor::predict_forward(params, &views);
        if s + 1 < steps {
            let next = extractor::extract_forward_stacked(
                params,
                out.clone().into_shape_with_order((batch * params.config.n_points, 2)).expect("points"),
                batch,
            );
            feats.remove(0);
            feats.push(next.features().clone());
        }
        for (b, o) in outputs.iter_mut().enumerate() {
            o.push(PointSet::from_flat(out.row(b).as_slice().expect("contiguous row")));
        }
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests;
