//! Building blocks with explicit forward caches and reverse-mode backward
//! passes. All weights live in one flat `&[f64]`; gradients accumulate into a
//! flat buffer with the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::layout::{Dense, LayerNorm, LstmDir};

pub(crate) fn view2(values: &[f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &values[offset..offset + rows * cols]).expect("layout shape")
}

pub(crate) fn view2_mut(values: &mut [f64], offset: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut values[offset..offset + rows * cols]).expect("layout shape")
}

pub(crate) fn view1(values: &[f64], offset: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&values[offset..offset + len])
}

pub(crate) fn view1_mut(values: &mut [f64], offset: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut values[offset..offset + len])
}

/// `out += a · b`
pub(crate) fn gemm_acc(a: &ArrayView2<f64>, b: &ArrayView2<f64>, out: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, a, b, 1.0, out);
}

pub(crate) fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, a, b, 0.0, &mut out);
    out
}

pub(crate) fn dense_forward(x: &ArrayView2<f64>, layer: &Dense, values: &[f64], relu: bool) -> Array2<f64> {
    let w = view2(values, layer.w, layer.fan_in, layer.fan_out);
    let b = view1(values, layer.b, layer.fan_out);
    let mut y = Array2::zeros((x.nrows(), layer.fan_out));
    y.rows_mut().into_iter().for_each(|mut r| r.assign(&b));
    general_mat_mul(1.0, x, &w, 1.0, &mut y);
    if relu {
        y.mapv_inplace(|v| v.max(0.0));
    }
    y
}

/// Backward of `y = act(x W + b)`. `dy` is consumed and turned into the
/// pre-activation gradient. Returns `dx` when requested.
pub(crate) fn dense_backward(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mut dy: Array2<f64>,
    layer: &Dense,
    values: &[f64],
    grads: &mut [f64],
    relu: bool,
    need_dx: bool,
) -> Option<Array2<f64>> {
    if relu {
        dy.zip_mut_with(y, |d, &out| {
            if out <= 0.0 {
                *d = 0.0
            }
        });
    }
    {
        let mut dw = view2_mut(grads, layer.w, layer.fan_in, layer.fan_out);
        gemm_acc(&x.t(), &dy.view(), &mut dw);
    }
    {
        let mut db = view1_mut(grads, layer.b, layer.fan_out);
        db += &dy.sum_axis(Axis(0));
    }
    need_dx.then(|| {
        let w = view2(values, layer.w, layer.fan_in, layer.fan_out);
        matmul(&dy.view(), &w.t())
    })
}

/// Activations of a dense stack: `acts[0]` is the input, `acts[i + 1]` the
/// output of layer `i`.
#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    pub acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("mlp cache is never empty")
    }
}

/// Hidden layers always use ReLU; the last one only if `relu_last`.
pub(crate) fn mlp_forward(x: Array2<f64>, layers: &[Dense], values: &[f64], relu_last: bool) -> MlpCache {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x);
    for (i, layer) in layers.iter().enumerate() {
        let relu = relu_last || i + 1 < layers.len();
        let y = dense_forward(&acts[i].view(), layer, values, relu);
        acts.push(y);
    }
    MlpCache { acts }
}

pub(crate) fn mlp_backward(
    cache: &MlpCache,
    dy: Array2<f64>,
    layers: &[Dense],
    values: &[f64],
    grads: &mut [f64],
    relu_last: bool,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let mut d = dy;
    for i in (0..layers.len()).rev() {
        let relu = relu_last || i + 1 < layers.len();
        let want = need_dx || i > 0;
        match dense_backward(&cache.acts[i].view(), &cache.acts[i + 1].view(), d, &layers[i], values, grads, relu, want) {
            Some(dx) => d = dx,
            None => return None,
        }
    }
    Some(d)
}

/// Max over each consecutive block of `per` rows. Ties go to the lowest row.
pub(crate) fn segmented_max(x: &Array2<f64>, per: usize) -> (Array2<f64>, Vec<usize>) {
    let groups = x.nrows() / per;
    let cols = x.ncols();
    let mut out = Array2::from_elem((groups, cols), f64::NEG_INFINITY);
    let mut arg = vec![0usize; groups * cols];
    for g in 0..groups {
        let mut best = out.row_mut(g);
        for r in g * per..(g + 1) * per {
            let row = x.row(r);
            for c in 0..cols {
                if row[c] > best[c] {
                    best[c] = row[c];
                    arg[g * cols + c] = r;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn segmented_max_backward(dpool: &Array2<f64>, arg: &[usize], rows: usize) -> Array2<f64> {
    let cols = dpool.ncols();
    let mut dx = Array2::zeros((rows, cols));
    for g in 0..dpool.nrows() {
        for c in 0..cols {
            dx[[arg[g * cols + c], c]] += dpool[[g, c]];
        }
    }
    dx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of an LSTM layer at one time step.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    /// Gate activations `[i | f | g | o]`, shape `lanes × 4H`.
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

/// Runs one LSTM direction over `xs` (time-ordered). The returned steps are
/// indexed by time, whatever the direction.
pub(crate) fn lstm_forward(xs: &[Array2<f64>], dir: &LstmDir, values: &[f64], reverse: bool) -> Vec<LstmStep> {
    let steps = xs.len();
    let lanes = xs[0].nrows();
    let h = dir.hidden;
    let w_ih = view2(values, dir.w_ih, dir.input, 4 * h);
    let w_hh = view2(values, dir.w_hh, h, 4 * h);
    let bias = view1(values, dir.b, 4 * h);

    let mut out: Vec<Option<LstmStep>> = vec![None; steps];
    let mut h_prev = Array2::<f64>::zeros((lanes, h));
    let mut c_prev = Array2::<f64>::zeros((lanes, h));
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for &t in &order {
        let mut gates = Array2::zeros((lanes, 4 * h));
        gates.rows_mut().into_iter().for_each(|mut r| r.assign(&bias));
        general_mat_mul(1.0, &xs[t].view(), &w_ih, 1.0, &mut gates);
        general_mat_mul(1.0, &h_prev.view(), &w_hh, 1.0, &mut gates);
        let mut c = Array2::zeros((lanes, h));
        let mut tc = Array2::zeros((lanes, h));
        let mut hn = Array2::zeros((lanes, h));
        {
            let gs = gates.as_slice_mut().expect("standard layout");
            let cp = c_prev.as_slice().expect("standard layout");
            let cs = c.as_slice_mut().expect("standard layout");
            let ts = tc.as_slice_mut().expect("standard layout");
            let hs = hn.as_slice_mut().expect("standard layout");
            for l in 0..lanes {
                let g = &mut gs[l * 4 * h..(l + 1) * 4 * h];
                let (i_s, rest) = g.split_at_mut(h);
                let (f_s, rest) = rest.split_at_mut(h);
                let (g_s, o_s) = rest.split_at_mut(h);
                let row = l * h..(l + 1) * h;
                let (cp, cs, ts, hs) = (&cp[row.clone()], &mut cs[row.clone()], &mut ts[row.clone()], &mut hs[row]);
                for u in 0..h {
                    let i_g = sigmoid(i_s[u]);
                    let f_g = sigmoid(f_s[u]);
                    let g_g = g_s[u].tanh();
                    let o_g = sigmoid(o_s[u]);
                    i_s[u] = i_g;
                    f_s[u] = f_g;
                    g_s[u] = g_g;
                    o_s[u] = o_g;
                    let cv = f_g * cp[u] + i_g * g_g;
                    let t = cv.tanh();
                    cs[u] = cv;
                    ts[u] = t;
                    hs[u] = o_g * t;
                }
            }
        }
        h_prev = hn.clone();
        c_prev = c.clone();
        out[t] = Some(LstmStep { gates, c, tanh_c: tc, h: hn });
    }
    out.into_iter().map(|s| s.expect("every step visited")).collect()
}

/// Backward through one LSTM direction. `dhs[t]` is the gradient arriving at
/// the output `h` of step `t`. Returns `dx` per time step.
pub(crate) fn lstm_backward(
    xs: &[Array2<f64>],
    steps: &[LstmStep],
    dhs: &[Array2<f64>],
    dir: &LstmDir,
    values: &[f64],
    grads: &mut [f64],
    reverse: bool,
    need_dx: bool,
) -> Vec<Array2<f64>> {
    let n = xs.len();
    let lanes = xs[0].nrows();
    let h = dir.hidden;
    let w_ih = view2(values, dir.w_ih, dir.input, 4 * h);
    let w_hh = view2(values, dir.w_hh, h, 4 * h);

    let forward_order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    let zeros = Array2::<f64>::zeros((lanes, h));
    let mut dh_next = Array2::<f64>::zeros((lanes, h));
    let mut dc_next = Array2::<f64>::zeros((lanes, h));
    let mut dxs = vec![Array2::<f64>::zeros((0, 0)); n];

    for pos in (0..n).rev() {
        let t = forward_order[pos];
        let (h_prev, c_prev) = if pos == 0 {
            (&zeros, &zeros)
        } else {
            let p = forward_order[pos - 1];
            (&steps[p].h, &steps[p].c)
        };
        let st = &steps[t];
        let mut da = Array2::<f64>::zeros((lanes, 4 * h));
        {
            let gs = st.gates.as_slice().expect("standard layout");
            let ts = st.tanh_c.as_slice().expect("standard layout");
            let cp = c_prev.as_slice().expect("standard layout");
            let dh_out = dhs[t].as_slice().expect("standard layout");
            let dh_rec = dh_next.as_slice().expect("standard layout");
            let dcs = dc_next.as_slice_mut().expect("standard layout");
            let das = da.as_slice_mut().expect("standard layout");
            for l in 0..lanes {
                let g = &gs[l * 4 * h..(l + 1) * 4 * h];
                let d = &mut das[l * 4 * h..(l + 1) * 4 * h];
                let base = l * h;
                for u in 0..h {
                    let k = base + u;
                    let (i_g, f_g, g_g, o_g) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                    let tc = ts[k];
                    let dh = dh_out[k] + dh_rec[k];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (1.0 - tc * tc) + dcs[k];
                    dcs[k] = dc * f_g;
                    d[u] = dc * g_g * i_g * (1.0 - i_g);
                    d[h + u] = dc * cp[k] * f_g * (1.0 - f_g);
                    d[2 * h + u] = dc * i_g * (1.0 - g_g * g_g);
                    d[3 * h + u] = d_o * o_g * (1.0 - o_g);
                }
            }
        }
        {
            let mut dw = view2_mut(grads, dir.w_ih, dir.input, 4 * h);
            gemm_acc(&xs[t].t(), &da.view(), &mut dw);
        }
        if pos > 0 {
            let mut dw = view2_mut(grads, dir.w_hh, h, 4 * h);
            gemm_acc(&h_prev.t(), &da.view(), &mut dw);
        }
        {
            let mut db = view1_mut(grads, dir.b, 4 * h);
            db += &da.sum_axis(Axis(0));
        }
        dh_next = matmul(&da.view(), &w_hh.t());
        if need_dx {
            dxs[t] = matmul(&da.view(), &w_ih.t());
        }
    }
    dxs
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Normalizes each row over its columns, then applies scale and shift.
pub(crate) fn layer_norm_forward(x: &Array2<f64>, ln: &LayerNorm, values: &[f64]) -> (Array2<f64>, LayerNormCache) {
    let gamma = view1(values, ln.gamma, ln.dim);
    let beta = view1(values, ln.beta, ln.dim);
    let d = ln.dim as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    let mut y = Array2::zeros(x.raw_dim());
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv_std[r] = is;
        let mut yr = y.row_mut(r);
        for c in 0..ln.dim {
            yr[c] = gamma[c] * row[c] + beta[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    dy: &Array2<f64>,
    ln: &LayerNorm,
    values: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    let gamma = view1(values, ln.gamma, ln.dim);
    {
        let mut dg = view1_mut(grads, ln.gamma, ln.dim);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut dbeta = view1_mut(grads, ln.beta, ln.dim);
        dbeta += &dy.sum_axis(Axis(0));
    }
    let d = ln.dim as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let xh = cache.xhat.row(r);
        let dxh: Vec<f64> = (0..ln.dim).map(|c| dy[[r, c]] * gamma[c]).collect();
        let mean_dxh = dxh.iter().sum::<f64>() / d;
        let mean_dxh_xh = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let is = cache.inv_std[r];
        let mut out = dx.row_mut(r);
        for c in 0..ln.dim {
            out[c] = is * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

/// Rows `[start, start + len)` of `x`.
pub(crate) fn rows(x: &Array2<f64>, start: usize, len: usize) -> ArrayView2<'_, f64> {
    x.slice(s![start..start + len, ..])
}
