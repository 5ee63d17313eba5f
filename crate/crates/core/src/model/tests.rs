use super::*;
use crate::geom::Vec2;
use rand::seq::SliceRandom;

/// Plain scalar-loop evaluation of the whole network, used as an oracle.
mod reference {
    use super::super::layout::{Dense, LstmDir, TNet};
    use super::*;

    pub fn dense(v: &[f64], d: &Dense, x: &[f64], relu: bool) -> Vec<f64> {
        (0..d.fan_out)
            .map(|o| {
                let mut acc = v[d.b + o];
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * v[d.w + i * d.fan_out + o];
                }
                if relu {
                    acc.max(0.0)
                } else {
                    acc
                }
            })
            .collect()
    }

    fn pool(rows: &[Vec<f64>]) -> Vec<f64> {
        (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    fn per_point(v: &[f64], layers: &[Dense], rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| layers.iter().fold(r.clone(), |x, d| dense(v, d, &x, true)))
            .collect()
    }

    fn tnet(v: &[f64], t: &TNet, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let pooled = pool(&per_point(v, &t.point, rows));
        let fc = t.fc.iter().fold(pooled, |x, d| dense(v, d, &x, true));
        let raw = dense(v, &t.out, &fc, false);
        (0..t.dim)
            .map(|r| (0..t.dim).map(|c| raw[r * t.dim + c] + if r == c { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn transform(rows: &[Vec<f64>], m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| (0..m[0].len()).map(|c| (0..r.len()).map(|i| r[i] * m[i][c]).sum()).collect())
            .collect()
    }

    pub fn features(p: &ModelParams, frame: &PointSet) -> Vec<f64> {
        let (l, v) = (p.layout(), p.flat());
        let mut rows: Vec<Vec<f64>> = frame.iter().map(|q| vec![q.x, q.y]).collect();
        if let Some(t) = &l.input_tnet {
            rows = transform(&rows, &tnet(v, t, &rows));
        }
        rows = per_point(v, &l.mlp1, &rows);
        if let Some(t) = &l.feature_tnet {
            rows = transform(&rows, &tnet(v, t, &rows));
        }
        rows = per_point(v, &l.mlp2, &rows);
        dense(v, &l.refine, &pool(&rows), true)
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// One lane, one direction: returns h per time step (time-indexed).
    pub fn lstm(v: &[f64], d: &LstmDir, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
        let h = d.hidden;
        let mut hs = vec![vec![0.0; h]; xs.len()];
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let mut a = vec![0.0; 4 * h];
            for (g, av) in a.iter_mut().enumerate() {
                *av = v[d.b + g];
                for i in 0..d.input {
                    *av += xs[t][i] * v[d.w_ih + i * 4 * h + g];
                }
                for i in 0..h {
                    *av += hp[i] * v[d.w_hh + i * 4 * h + g];
                }
            }
            for u in 0..h {
                let c = sig(a[h + u]) * cp[u] + sig(a[u]) * a[2 * h + u].tanh();
                cp[u] = c;
                hp[u] = sig(a[3 * h + u]) * c.tanh();
            }
            hs[t] = hp.clone();
        }
        hs
    }

    pub fn predict(p: &ModelParams, feats: &[Vec<f64>]) -> Vec<f64> {
        let (l, v) = (p.layout(), p.flat());
        let m = feats.len();
        let k = feats[0].len();
        let mut z = Vec::new();
        for j in 0..k {
            let mut xs: Vec<Vec<f64>> = feats.iter().map(|f| vec![f[j]]).collect();
            for (li, pair) in l.lstm.iter().enumerate() {
                let f = lstm(v, &pair[0], &xs, false);
                let b = lstm(v, &pair[1], &xs, true);
                let outs: Vec<Vec<f64>> = (0..m).map(|t| f[t].iter().chain(&b[t]).copied().collect()).collect();
                xs = if li + 1 < l.lstm.len() {
                    let ln = &l.norms[li];
                    outs.iter()
                        .map(|o| {
                            let mean = o.iter().sum::<f64>() / o.len() as f64;
                            let var = o.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / o.len() as f64;
                            let sd = (var + 1e-5).sqrt();
                            o.iter()
                                .enumerate()
                                .map(|(c, x)| v[ln.gamma + c] * (x - mean) / sd + v[ln.beta + c])
                                .collect()
                        })
                        .collect()
                } else {
                    outs
                };
            }
            for o in &xs {
                z.extend_from_slice(o);
            }
        }
        dense(v, &l.readout, &z, false)
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_points: 6,
        m_frames: 3,
        point_mlp1: vec![5, 4],
        point_mlp2: vec![6, 8],
        k_global: 8,
        lstm_hidden: 4,
        lstm_layers: 3,
        tnet_point_widths: vec![5, 6],
        tnet_fc_widths: vec![5],
        seed: 3,
        ..ModelConfig::default()
    }
}

/// Random parameters everywhere, including the zero-initialized T-net outputs.
fn scrambled(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = init_params(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.flat_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    p
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
    (0..n).map(|_| Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect()
}

fn shuffled(rng: &mut ChaCha8Rng, p: &PointSet) -> PointSet {
    let mut v = p.0.clone();
    v.shuffle(rng);
    PointSet::new(v)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
}

#[test]
fn init_is_seeded() {
    let cfg = tiny_config();
    assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
    let other = init_params(&ModelConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(init_params(&tiny_config()).unwrap().flat(), other.flat());
}

#[test]
fn fresh_input_transform_is_identity() {
    let p = init_params(&ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = input_transform(&p, &random_frame(&mut rng, 30)).unwrap();
    assert_eq!(t, [[1.0, 0.0], [0.0, 1.0]]);
}

#[test]
fn default_param_count() {
    let cfg = ModelConfig::default();
    // Hand shape arithmetic: input T-net 4420, mlp1 4352, feature T-net 141440,
    // mlp2 45504, refine 65792, LSTM 58368, norms 256, readout 4915260.
    assert_eq!(param_count(&cfg), 5_235_392);
    assert_eq!(init_params(&cfg).unwrap().len(), 5_235_392);
}

#[test]
fn minimal_param_count() {
    let cfg = ModelConfig {
        n_points: 1,
        m_frames: 3,
        point_mlp1: vec![1],
        point_mlp2: vec![1],
        k_global: 1,
        lstm_hidden: 1,
        lstm_layers: 1,
        use_input_transform: false,
        use_feature_transform: false,
        ..ModelConfig::default()
    };
    // mlp1 2·1+1, mlp2 1+1, refine 1+1, lstm 2·(4+4+4), readout 6·2+2
    assert_eq!(param_count(&cfg), 3 + 2 + 2 + 24 + 14);
    assert_eq!(Layout::new(&cfg).total, param_count(&cfg));
    let three = ModelConfig { lstm_layers: 3, ..cfg };
    assert_eq!(param_count(&three), 3 + 2 + 2 + 24 + 2 * 32 + 2 * 4 + 14);
    assert_eq!(Layout::new(&three).total, param_count(&three));
}

#[test]
fn doubling_hidden_touches_only_lstm_and_readout() {
    let a = ModelConfig::default();
    let b = ModelConfig { lstm_hidden: 64, ..a.clone() };
    let (la, lb) = (Layout::new(&a), Layout::new(&b));
    for blk in la.blocks.iter().filter(|b| !b.name.starts_with("lstm") && !b.name.starts_with("norm") && b.name != "readout") {
        let other = lb.block(&blk.name).unwrap();
        assert_eq!(blk.range.len(), other.range.len(), "{}", blk.name);
    }
    assert_ne!(la.block("readout").unwrap().range.len(), lb.block("readout").unwrap().range.len());
}

#[test]
fn config_contract() {
    assert!(init_params(&ModelConfig { m_frames: 2, ..ModelConfig::default() }).is_err());
    assert!(init_params(&ModelConfig { k_global: 100, ..ModelConfig::default() }).is_err());
    let p = init_params(&tiny_config()).unwrap();
    let frames = vec![PointSet::new(vec![Vec2::ZERO; 6]); 2];
    assert_eq!(forward(&p, &frames), Err(ModelError::WrongFrameCount { expected: 3, found: 2 }));
    let frames = vec![PointSet::new(vec![Vec2::ZERO; 5]); 3];
    assert_eq!(forward(&p, &frames), Err(ModelError::WrongPointCount { expected: 6, found: 5 }));
    assert_eq!(rollout(&p, &vec![PointSet::new(vec![Vec2::ZERO; 6]); 3], 0), Err(ModelError::NoSteps));
}

#[test]
fn features_match_scalar_reference() {
    let cfg = tiny_config();
    let p = scrambled(&cfg, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let frame = random_frame(&mut rng, 6);
        let got = extract_features(&p, &frame).unwrap();
        let want = reference::features(&p, &frame);
        assert!(max_rel(&got.0, &want) < 1e-12, "{:?} vs {:?}", got.0, want);
    }
}

#[test]
fn three_point_frame_with_hand_set_weights() {
    let cfg = ModelConfig {
        n_points: 3,
        m_frames: 3,
        point_mlp1: vec![2],
        point_mlp2: vec![2],
        k_global: 2,
        lstm_hidden: 1,
        lstm_layers: 1,
        use_input_transform: true,
        use_feature_transform: true,
        tnet_point_widths: vec![1],
        tnet_fc_widths: vec![1],
        seed: 0,
    };
    let mut p = init_params(&cfg).unwrap();
    let l = p.layout().clone();
    let v = p.flat_mut();
    // mlp1: [[1, -1], [2, 0.5]], b = [0.1, 0]
    v[l.mlp1[0].w..l.mlp1[0].w + 4].copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
    v[l.mlp1[0].b..l.mlp1[0].b + 2].copy_from_slice(&[0.1, 0.0]);
    // mlp2: [[0.5, 1], [-1, 1]], b = [0, -0.2]
    v[l.mlp2[0].w..l.mlp2[0].w + 4].copy_from_slice(&[0.5, 1.0, -1.0, 1.0]);
    v[l.mlp2[0].b..l.mlp2[0].b + 2].copy_from_slice(&[0.0, -0.2]);
    // refine: [[1, 0], [1, 2]], b = [0, 0]
    v[l.refine.w..l.refine.w + 4].copy_from_slice(&[1.0, 0.0, 1.0, 2.0]);
    v[l.refine.b..l.refine.b + 2].copy_from_slice(&[0.0, 0.0]);
    let frame = PointSet::new(vec![Vec2::new(0.2, 0.4), Vec2::new(0.9, 0.1), Vec2::new(0.5, 0.5)]);
    // Scripted evaluation (T-nets are the identity at init):
    // mlp1 rows: relu([x + 2y + 0.1, -x + 0.5y])
    //   (0.2,0.4) -> [1.1, 0.0]; (0.9,0.1) -> [1.2, 0.0]; (0.5,0.5) -> [1.6, 0.0]
    // mlp2 rows: relu([0.5a - b, a + b - 0.2]) -> [0.55, 0.9], [0.6, 1.0], [0.8, 1.4]
    // pool -> [0.8, 1.4]; refine -> relu([0.8 + 1.4, 2.8]) = [2.2, 2.8]
    let got = extract_features(&p, &frame).unwrap();
    assert!((got.0[0] - 2.2).abs() < 1e-12 && (got.0[1] - 2.8).abs() < 1e-12, "{:?}", got.0);
}

#[test]
fn single_channel_lstm_matches_scripted_recurrence() {
    let cfg = ModelConfig {
        n_points: 1,
        m_frames: 3,
        point_mlp1: vec![1],
        point_mlp2: vec![1],
        k_global: 1,
        lstm_hidden: 1,
        lstm_layers: 1,
        use_input_transform: false,
        use_feature_transform: false,
        ..ModelConfig::default()
    };
    let mut p = init_params(&cfg).unwrap();
    let l = p.layout().clone();
    let v = p.flat_mut();
    let (f, b) = (&l.lstm[0][0], &l.lstm[0][1]);
    // gates i, f, g, o
    v[f.w_ih..f.w_ih + 4].copy_from_slice(&[0.5, -0.3, 0.8, 0.2]);
    v[f.w_hh..f.w_hh + 4].copy_from_slice(&[0.1, 0.4, -0.6, 0.3]);
    v[f.b..f.b + 4].copy_from_slice(&[0.0, 1.0, 0.1, -0.1]);
    v[b.w_ih..b.w_ih + 4].copy_from_slice(&[-0.2, 0.7, 0.5, 0.9]);
    v[b.w_hh..b.w_hh + 4].copy_from_slice(&[0.3, -0.1, 0.2, -0.4]);
    v[b.b..b.b + 4].copy_from_slice(&[0.2, 1.0, 0.0, 0.3]);
    let r = &l.readout;
    v[r.w..r.w + 12].copy_from_slice(&[1.0, -1.0, 0.5, 0.25, -2.0, 1.5, 0.3, 0.7, 0.9, -0.4, 1.1, 0.6]);
    v[r.b..r.b + 2].copy_from_slice(&[0.05, -0.05]);
    let xs = [0.3, -0.7, 1.2];

    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let cell = |w: [f64; 4], u: [f64; 4], bias: [f64; 4], x: f64, h: f64, c: f64| {
        let a: Vec<f64> = (0..4).map(|g| w[g] * x + u[g] * h + bias[g]).collect();
        let c2 = sig(a[1]) * c + sig(a[0]) * a[2].tanh();
        (sig(a[3]) * c2.tanh(), c2)
    };
    let (wf, uf, bf) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.3], [0.0, 1.0, 0.1, -0.1]);
    let (wb, ub, bb) = ([-0.2, 0.7, 0.5, 0.9], [0.3, -0.1, 0.2, -0.4], [0.2, 1.0, 0.0, 0.3]);
    let mut hf = [0.0; 3];
    let (mut h, mut c) = (0.0, 0.0);
    for t in 0..3 {
        (h, c) = cell(wf, uf, bf, xs[t], h, c);
        hf[t] = h;
    }
    let mut hb = [0.0; 3];
    let (mut h, mut c) = (0.0, 0.0);
    for t in (0..3).rev() {
        (h, c) = cell(wb, ub, bb, xs[t], h, c);
        hb[t] = h;
    }
    let z = [hf[0], hb[0], hf[1], hb[1], hf[2], hb[2]];
    let w = [1.0, -1.0, 0.5, 0.25, -2.0, 1.5, 0.3, 0.7, 0.9, -0.4, 1.1, 0.6];
    let out_x = 0.05 + (0..6).map(|i| z[i] * w[2 * i]).sum::<f64>();
    let out_y = -0.05 + (0..6).map(|i| z[i] * w[2 * i + 1]).sum::<f64>();

    let feats: Vec<GlobalFeatures> = xs.iter().map(|&x| GlobalFeatures(vec![x])).collect();
    let got = predict_next(&p, &feats).unwrap();
    assert!((got[0].x - out_x).abs() < 1e-12 && (got[0].y - out_y).abs() < 1e-12);
}

#[test]
fn predictor_matches_scalar_reference() {
    let cfg = tiny_config();
    let p = scrambled(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feats: Vec<GlobalFeatures> =
        (0..3).map(|_| GlobalFeatures((0..8).map(|_| rng.gen_range(-1.0..2.0)).collect())).collect();
    let got = predict_next(&p, &feats).unwrap().to_flat();
    let raw: Vec<Vec<f64>> = feats.iter().map(|f| f.0.clone()).collect();
    let want = reference::predict(&p, &raw);
    assert!(max_rel(&got, &want) < 1e-12);
}

#[test]
fn extraction_is_permutation_invariant() {
    let p = scrambled(&tiny_config(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let f = random_frame(&mut rng, 6);
        let a = extract_features(&p, &f).unwrap();
        let b = extract_features(&p, &shuffled(&mut rng, &f)).unwrap();
        assert!(max_rel(&a.0, &b.0) <= 1e-12);
    }
}

#[test]
fn duplicate_points_do_not_change_features() {
    let p = scrambled(&tiny_config(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = random_frame(&mut rng, 6);
    let mut with_dup = f.clone();
    with_dup.0.push(f[2]);
    let a = extractor::extract_forward(&p, &[&f]);
    let b = extractor::extract_forward(&p, &[&with_dup]);
    assert_eq!(a.features(), b.features());

    let same = PointSet::new(vec![f[0]; 6]);
    let single = PointSet::new(vec![f[0]]);
    let a = extractor::extract_forward(&p, &[&same]);
    let b = extractor::extract_forward(&p, &[&single]);
    assert_eq!(a.features(), b.features());
}

#[test]
fn forward_is_permutation_invariant_and_deterministic() {
    let cfg = tiny_config();
    let p = scrambled(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let frames: Vec<PointSet> = (0..3).map(|_| random_frame(&mut rng, 6)).collect();
    let base = forward(&p, &frames).unwrap();
    assert_eq!(base, forward(&p, &frames).unwrap());
    assert_eq!(base.len(), 6);
    for _ in 0..100 {
        let perm: Vec<PointSet> = frames.iter().map(|f| shuffled(&mut rng, f)).collect();
        assert!(max_rel(&base.to_flat(), &forward(&p, &perm).unwrap().to_flat()) <= 1e-6);
    }
}

#[test]
fn rollout_window_bookkeeping() {
    let cfg = tiny_config();
    let p = scrambled(&cfg, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let frames: Vec<PointSet> = (0..3).map(|_| random_frame(&mut rng, 6)).collect();
    let mut windows: Vec<Vec<Array2<f64>>> = Vec::new();
    let preds = rollout_batch_observed(&p, &[&frames], 80, |_, f| windows.push(f.to_vec())).unwrap().remove(0);
    assert_eq!(preds.len(), 80);
    let m = 3;
    for s in 0..80 {
        for t in 0..m {
            // Slot t of the window at step s holds frame s + t of [inputs ++ predictions].
            let idx = s + t;
            let frame = if idx < m { &frames[idx] } else { &preds[idx - m] };
            let want = extract_features(&p, frame).unwrap();
            assert_eq!(windows[s][t].row(0).to_vec(), want.0, "step {s} slot {t}");
        }
    }
    assert_eq!(rollout(&p, &frames, 1).unwrap(), vec![forward(&p, &frames).unwrap()]);
    assert_eq!(rollout(&p, &frames, 8).unwrap().len(), 8);
    assert_eq!(&rollout(&p, &frames, 8).unwrap()[..], &preds[..8]);
}

#[test]
fn batched_rollout_matches_single() {
    let p = scrambled(&tiny_config(), 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a: Vec<PointSet> = (0..3).map(|_| random_frame(&mut rng, 6)).collect();
    let b: Vec<PointSet> = (0..3).map(|_| random_frame(&mut rng, 6)).collect();
    let both = rollout_batch(&p, &[&a, &b], 5).unwrap();
    let ra = rollout(&p, &a, 5).unwrap();
    let rb = rollout(&p, &b, 5).unwrap();
    for (x, y) in both[0].iter().chain(&both[1]).zip(ra.iter().chain(&rb)) {
        assert!(max_rel(&x.to_flat(), &y.to_flat()) < 1e-12);
    }
}

#[test]
fn zeroing_a_channel_only_touches_its_lane() {
    let cfg = tiny_config();
    let p = scrambled(&cfg, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let feats: Vec<Array2<f64>> =
        (0..3).map(|_| Array2::from_shape_fn((1, 8), |_| rng.gen_range(0.1..1.0))).collect();
    let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
    let (_, base) = predictor::predict_forward(&p, &views);
    let j = 5;
    let masked: Vec<Array2<f64>> = feats
        .iter()
        .map(|f| {
            let mut g = f.clone();
            g[[0, j]] = 0.0;
            g
        })
        .collect();
    let views: Vec<_> = masked.iter().map(|f| f.view()).collect();
    let (_, other) = predictor::predict_forward(&p, &views);
    let lane = 3 * 2 * 4;
    for c in 0..8 {
        let a = base.z().slice(ndarray::s![0, c * lane..(c + 1) * lane]).to_owned();
        let b = other.z().slice(ndarray::s![0, c * lane..(c + 1) * lane]).to_owned();
        if c == j {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn outputs_are_finite_for_extreme_inputs() {
    let p = scrambled(&tiny_config(), 19);
    let frames: Vec<PointSet> = [1e6, -1e6, 0.0]
        .iter()
        .map(|&s| PointSet::new((0..6).map(|i| Vec2::new(s * i as f64, -s)).collect()))
        .collect();
    assert!(rollout(&p, &frames, 3).unwrap().iter().all(|f| f.is_finite()));
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let p = scrambled(&tiny_config(), 21);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p).unwrap();
    let back = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back.config(), p.config());
    assert!(back.flat().iter().zip(p.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));

    assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(CheckpointError::Truncated { .. })));
    assert!(matches!(read_checkpoint(&b"garbage\n"[..]), Err(CheckpointError::BadHeader(_))));
    let text = String::from_utf8_lossy(&buf[..40]).to_string();
    assert!(text.starts_with("{\"format\":\"tpnet-checkpoint\""));
}
