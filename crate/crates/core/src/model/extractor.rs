//! Shared per-frame feature extractor, batched over frames.
//!
//! A batch of `B` frames with `N` points each is stacked into a `B·N × 2`
//! matrix; per-point layers act on rows and pooling reduces each block of
//! `N` rows.

use ndarray::{s, Array2, Axis};

use super::layers::{
    dense_backward, dense_forward, matmul, mlp_backward, mlp_forward, rows, segmented_max, segmented_max_backward,
    MlpCache,
};
use super::layout::TNet;
use super::ModelParams;
use crate::geom::PointSet;

#[derive(Debug, Clone)]
pub(crate) struct TNetCache {
    point: MlpCache,
    arg: Vec<usize>,
    fc: MlpCache,
    raw: Array2<f64>,
    /// One `dim × dim` transform per frame (identity already added).
    pub transforms: Vec<Array2<f64>>,
}

fn tnet_forward(x: &Array2<f64>, n: usize, t: &TNet, values: &[f64]) -> TNetCache {
    let point = mlp_forward(x.clone(), &t.point, values, true);
    let (pooled, arg) = segmented_max(point.output(), n);
    let fc = mlp_forward(pooled, &t.fc, values, true);
    let raw = dense_forward(&fc.output().view(), &t.out, values, false);
    let transforms = raw
        .rows()
        .into_iter()
        .map(|r| {
            let mut m = r.to_owned().into_shape_with_order((t.dim, t.dim)).expect("square transform");
            m.diag_mut().mapv_inplace(|v| v + 1.0);
            m
        })
        .collect();
    TNetCache { point, arg, fc, raw, transforms }
}

/// `d_transforms` is `B × dim²`. Returns the gradient reaching the T-net's input.
fn tnet_backward(cache: &TNetCache, d_transforms: Array2<f64>, t: &TNet, values: &[f64], grads: &mut [f64]) -> Array2<f64> {
    let d_fc = dense_backward(&cache.fc.output().view(), &cache.raw.view(), d_transforms, &t.out, values, grads, false, true)
        .expect("dx requested");
    let d_pooled = mlp_backward(&cache.fc, d_fc, &t.fc, values, grads, true, true).expect("dx requested");
    let rows = cache.point.acts[0].nrows();
    let d_point = segmented_max_backward(&d_pooled, &cache.arg, rows);
    mlp_backward(&cache.point, d_point, &t.point, values, grads, true, true).expect("dx requested")
}

fn apply_transforms(x: &Array2<f64>, transforms: &[Array2<f64>], n: usize) -> Array2<f64> {
    let dim_out = transforms[0].ncols();
    let mut y = Array2::zeros((x.nrows(), dim_out));
    for (b, t) in transforms.iter().enumerate() {
        let prod = matmul(&rows(x, b * n, n), &t.view());
        y.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&prod);
    }
    y
}

/// Backward of `y_b = x_b T_b`: returns `(dx, dT)` with `dT` flattened to `B × dim²`.
fn apply_transforms_backward(x: &Array2<f64>, transforms: &[Array2<f64>], dy: &Array2<f64>, n: usize) -> (Array2<f64>, Array2<f64>) {
    let dim = transforms[0].nrows();
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dt = Array2::zeros((transforms.len(), dim * dim));
    for (b, t) in transforms.iter().enumerate() {
        let xb = rows(x, b * n, n);
        let dyb = rows(dy, b * n, n);
        let g = matmul(&xb.t(), &dyb);
        dt.row_mut(b).assign(&g.into_shape_with_order(dim * dim).expect("flatten"));
        dx.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&matmul(&dyb, &t.t()));
    }
    (dx, dt)
}

/// `sum_b ||T_b T_b^T - I||_F^2`.
pub(crate) fn orthogonality_penalty(transforms: &[Array2<f64>]) -> f64 {
    transforms
        .iter()
        .map(|t| {
            let mut m = matmul(&t.view(), &t.t());
            m.diag_mut().mapv_inplace(|v| v - 1.0);
            m.iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub(crate) struct ExtractCache {
    pub n: usize,

    x0: Array2<f64>,
    pub input_t: Option<TNetCache>,
    mlp1: MlpCache,
    pub feature_t: Option<TNetCache>,
    mlp2: MlpCache,
    arg: Vec<usize>,
    refine: MlpCache,
}

impl ExtractCache {
    /// `B × k` global features.
    pub fn features(&self) -> &Array2<f64> {
        self.refine.output()
    }

    pub fn orthogonality_penalty(&self) -> f64 {
        self.feature_t.as_ref().map_or(0.0, |t| orthogonality_penalty(&t.transforms))
    }

    /// Penalty of frame `b` alone.
    pub fn orthogonality_penalty_of(&self, b: usize) -> f64 {
        self.feature_t.as_ref().map_or(0.0, |t| orthogonality_penalty(&t.transforms[b..b + 1]))
    }
}

pub(crate) fn stack_frames(frames: &[&PointSet]) -> Array2<f64> {
    let n = frames[0].len();
    let flat: Vec<f64> = frames.iter().flat_map(|f| f.to_flat()).collect();
    Array2::from_shape_vec((frames.len() * n, 2), flat).expect("stacked frames")
}

/// Frames must all have `params.config().n_points` points; callers check.
pub(crate) fn extract_forward(params: &ModelParams, frames: &[&PointSet]) -> ExtractCache {
    let x0 = stack_frames(frames);
    extract_forward_stacked(params, x0, frames.len())
}

pub(crate) fn extract_forward_stacked(params: &ModelParams, x0: Array2<f64>, batch: usize) -> ExtractCache {
    let layout = params.layout();
    let values = params.flat();
    let n = x0.nrows() / batch;

    let input_t = layout.input_tnet.as_ref().map(|t| tnet_forward(&x0, n, t, values));
    let x1 = match &input_t {
        Some(c) => apply_transforms(&x0, &c.transforms, n),
        None => x0.clone(),
    };
    let mlp1 = mlp_forward(x1, &layout.mlp1, values, true);
    let feature_t = layout.feature_tnet.as_ref().map(|t| tnet_forward(mlp1.output(), n, t, values));
    let f2 = match &feature_t {
        Some(c) => apply_transforms(mlp1.output(), &c.transforms, n),
        None => mlp1.output().clone(),
    };
    let mlp2 = mlp_forward(f2, &layout.mlp2, values, true);
    let (pooled, arg) = segmented_max(mlp2.output(), n);
    let refine = mlp_forward(pooled, std::slice::from_ref(&layout.refine), values, true);
    ExtractCache { n, x0, input_t, mlp1, feature_t, mlp2, arg, refine }
}

/// Backpropagates `dg` (`B × k`). `ortho_weight` scales the feature
/// transform's orthogonality penalty. Returns the gradient with respect to
/// the stacked input coordinates when `need_dx`.
pub(crate) fn extract_backward(
    cache: &ExtractCache,
    dg: Array2<f64>,
    params: &ModelParams,
    grads: &mut [f64],
    ortho_weight: f64,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let layout = params.layout();
    let values = params.flat();
    let n = cache.n;

    let d_pooled = mlp_backward(&cache.refine, dg, std::slice::from_ref(&layout.refine), values, grads, true, true)
        .expect("dx requested");
    let d_h = segmented_max_backward(&d_pooled, &cache.arg, cache.mlp2.acts[0].nrows());
    let d_f2 = mlp_backward(&cache.mlp2, d_h, &layout.mlp2, values, grads, true, true).expect("dx requested");

    let f1 = cache.mlp1.output();
    let d_f1 = match (&cache.feature_t, &layout.feature_tnet) {
        (Some(tc), Some(t)) => {
            let (mut d_f1, mut d_t) = apply_transforms_backward(f1, &tc.transforms, &d_f2, n);
            if ortho_weight != 0.0 {
                for (b, a) in tc.transforms.iter().enumerate() {
                    let mut m = matmul(&a.view(), &a.t());
                    m.diag_mut().mapv_inplace(|v| v - 1.0);
                    let g = matmul(&m.view(), &a.view()) * (4.0 * ortho_weight);
                    let mut row = d_t.row_mut(b);
                    row += &g.into_shape_with_order(t.dim * t.dim).expect("flatten");
                }
            }
            d_f1 += &tnet_backward(tc, d_t, t, values, grads);
            d_f1
        }
        _ => d_f2,
    };

    let need_x1 = need_dx || cache.input_t.is_some();
    let d_x1 = mlp_backward(&cache.mlp1, d_f1, &layout.mlp1, values, grads, true, need_x1);

    match (&cache.input_t, &layout.input_tnet) {
        (Some(tc), Some(t)) => {
            let d_x1 = d_x1.expect("dx requested");
            let (mut d_x0, d_t) = apply_transforms_backward(&cache.x0, &tc.transforms, &d_x1, n);
            let d_tnet_in = tnet_backward(tc, d_t, t, values, grads);
            if need_dx {
                d_x0 += &d_tnet_in;
                Some(d_x0)
            } else {
                None
            }
        }
        _ => d_x1,
    }
}

/// Row `b` of a `B × k` matrix.
pub(crate) fn row_vec(m: &Array2<f64>, b: usize) -> Vec<f64> {
    m.index_axis(Axis(0), b).to_vec()
}
