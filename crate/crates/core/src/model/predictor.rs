//! Channel-wise bidirectional LSTM predictor, batched over samples.
//!
//! Every (sample, channel) pair is an independent lane: lane `b·k + j`
//! carries feature `j` of sample `b` through time. All lanes share weights,
//! so one time step of one direction is a single `lanes × in` by `in × 4H`
//! product.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{
    dense_forward, gemm_acc, layer_norm_backward, layer_norm_forward, lstm_backward, lstm_forward, matmul, view1_mut,
    view2, view2_mut, LayerNormCache, LstmStep,
};
use super::ModelParams;

#[derive(Debug, Clone)]
pub(crate) struct PredictCache {
    batch: usize,
    /// `inputs[layer][t]`, each `lanes × in`.
    inputs: Vec<Vec<Array2<f64>>>,
    /// `dirs[layer][d][t]`
    dirs: Vec<[Vec<LstmStep>; 2]>,
    /// `norms[layer][t]` for every layer but the last.
    norms: Vec<Vec<LayerNormCache>>,
    z: Array2<f64>,
}

impl PredictCache {
    /// Flattened readout input, `B × k·m·2H`.
    #[allow(dead_code)]
    pub(crate) fn z(&self) -> &Array2<f64> {
        &self.z
    }
}

/// Readout products whose weight gradient is applied later in one product.
#[derive(Debug, Default)]
pub(crate) struct ReadoutAccum {
    zs: Vec<Array2<f64>>,
    ds: Vec<Array2<f64>>,
}

impl ReadoutAccum {
    pub fn flush(&mut self, params: &ModelParams, grads: &mut [f64]) {
        if self.zs.is_empty() {
            return;
        }
        let r = &params.layout().readout;
        let zs: Vec<ArrayView2<f64>> = self.zs.iter().map(|z| z.view()).collect();
        let ds: Vec<ArrayView2<f64>> = self.ds.iter().map(|d| d.view()).collect();
        let z = ndarray::concatenate(Axis(0), &zs).expect("same width");
        let d = ndarray::concatenate(Axis(0), &ds).expect("same width");
        let mut dw = view2_mut(grads, r.w, r.fan_in, r.fan_out);
        gemm_acc(&z.t(), &d.view(), &mut dw);
        self.zs.clear();
        self.ds.clear();
    }
}

fn concat_dirs(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("same lanes")
}

/// `feats[t]` is the `B × k` feature matrix of frame `t`. Returns the raw
/// `B × 2N` readout and the cache needed for the backward pass.
pub(crate) fn predict_forward(params: &ModelParams, feats: &[ArrayView2<f64>]) -> (Array2<f64>, PredictCache) {
    let layout = params.layout();
    let values = params.flat();
    let m = feats.len();
    let batch = feats[0].nrows();
    let k = feats[0].ncols();
    let lanes = batch * k;
    let hidden = params.config().lstm_hidden;
    let n_layers = layout.lstm.len();

    let mut xs: Vec<Array2<f64>> = feats
        .iter()
        .map(|f| f.to_owned().into_shape_with_order((lanes, 1)).expect("lane column"))
        .collect();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut dirs = Vec::with_capacity(n_layers);
    let mut norms = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut outs: Vec<Array2<f64>> = Vec::new();
    for (l, pair) in layout.lstm.iter().enumerate() {
        let fwd = lstm_forward(&xs, &pair[0], values, false);
        let bwd = lstm_forward(&xs, &pair[1], values, true);
        outs = (0..m).map(|t| concat_dirs(&fwd[t].h, &bwd[t].h)).collect();
        inputs.push(std::mem::take(&mut xs));
        dirs.push([fwd, bwd]);
        if l + 1 < n_layers {
            let (next, caches): (Vec<_>, Vec<_>) =
                outs.iter().map(|o| layer_norm_forward(o, &layout.norms[l], values)).unzip();
            xs = next;
            norms.push(caches);
        }
    }

    // z[b, j·m·2H + t·2H + c] = outs[t][b·k + j, c]
    let width = 2 * hidden;
    let mut z = Array2::zeros((batch, k * m * width));
    for b in 0..batch {
        let mut row = z.row_mut(b);
        for j in 0..k {
            for (t, o) in outs.iter().enumerate() {
                let base = j * m * width + t * width;
                row.slice_mut(s![base..base + width]).assign(&o.row(b * k + j));
            }
        }
    }
    let out = dense_forward(&z.view(), &layout.readout, values, false);
    (out, PredictCache { batch, inputs, dirs, norms, z })
}

/// Returns `d feats[t]` (each `B × k`). The readout weight gradient is
/// deferred into `acc`; everything else lands in `grads` immediately.
pub(crate) fn predict_backward(
    cache: &PredictCache,
    dout: Array2<f64>,
    params: &ModelParams,
    grads: &mut [f64],
    acc: &mut ReadoutAccum,
) -> Vec<Array2<f64>> {
    let layout = params.layout();
    let values = params.flat();
    let r = &layout.readout;
    let hidden = params.config().lstm_hidden;
    let width = 2 * hidden;
    let m = cache.inputs[0].len();
    let batch = cache.batch;
    let lanes = cache.inputs[0][0].nrows();
    let k = lanes / batch;

    {
        let mut db = view1_mut(grads, r.b, r.fan_out);
        db += &dout.sum_axis(Axis(0));
    }
    let w = view2(values, r.w, r.fan_in, r.fan_out);
    let dz = matmul(&dout.view(), &w.t());
    acc.zs.push(cache.z.clone());
    acc.ds.push(dout);

    let mut d_outs: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((lanes, width))).collect();
    for b in 0..batch {
        let row = dz.row(b);
        for j in 0..k {
            for (t, d) in d_outs.iter_mut().enumerate() {
                let base = j * m * width + t * width;
                d.row_mut(b * k + j).assign(&row.slice(s![base..base + width]));
            }
        }
    }

    for l in (0..layout.lstm.len()).rev() {
        let xs = &cache.inputs[l];
        let pair = &layout.lstm[l];
        let dh_f: Vec<Array2<f64>> = d_outs.iter().map(|d| d.slice(s![.., ..hidden]).to_owned()).collect();
        let dh_b: Vec<Array2<f64>> = d_outs.iter().map(|d| d.slice(s![.., hidden..]).to_owned()).collect();
        let dx_f = lstm_backward(xs, &cache.dirs[l][0], &dh_f, &pair[0], values, grads, false, true);
        let dx_b = lstm_backward(xs, &cache.dirs[l][1], &dh_b, &pair[1], values, grads, true, true);
        let dxs: Vec<Array2<f64>> = dx_f.into_iter().zip(dx_b).map(|(a, b)| a + b).collect();
        if l > 0 {
            d_outs = dxs
                .iter()
                .zip(&cache.norms[l - 1])
                .map(|(d, c)| layer_norm_backward(c, d, &layout.norms[l - 1], values, grads))
                .collect();
        } else {
            return dxs
                .into_iter()
                .map(|d| d.into_shape_with_order((batch, k)).expect("lane column"))
                .collect();
        }
    }
    unreachable!("at least one LSTM layer")
}
