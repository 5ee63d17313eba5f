//! Flat parameter layout.
//!
//! Parameters are stored in one `Vec<f64>` in this fixed order:
//!
//! 1. input T-net (if enabled): point layers, fully-connected layers, output layer (2 → 2·2)
//! 2. first point MLP (2 → ... → d)
//! 3. feature T-net (if enabled), same structure with output d·d
//! 4. second point MLP (d → ... → k)
//! 5. refinement layer (k → k)
//! 6. LSTM stack: for each layer, forward then backward direction, each as
//!    `W_ih (in × 4H)`, `W_hh (H × 4H)`, `b (4H)` with gates ordered i, f, g, o
//! 7. layer norms between LSTM layers: `gamma (2H)`, `beta (2H)`
//! 8. readout (k·m·2H → 2N)
//!
//! Every dense layer is `W (fan_in × fan_out)` row-major followed by `b (fan_out)`.

use std::ops::Range;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TNet {
    /// Dimension of the square transform it emits.
    pub dim: usize,
    pub point: Vec<Dense>,
    pub fc: Vec<Dense>,
    pub out: Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmDir {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
    pub dim: usize,
}

/// A named contiguous slice of the flat vector, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub input_tnet: Option<TNet>,
    pub mlp1: Vec<Dense>,
    pub feature_tnet: Option<TNet>,
    pub mlp2: Vec<Dense>,
    pub refine: Dense,
    /// `lstm[layer][0]` is the forward direction, `[1]` the backward one.
    pub lstm: Vec<[LstmDir; 2]>,
    pub norms: Vec<LayerNorm>,
    pub readout: Dense,
    pub blocks: Vec<Block>,
    pub total: usize,
}

impl Layout {
    pub fn block_of(&self, index: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.range.contains(&index))
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Width of per-point features entering the feature transform.
    pub fn feature_dim(&self) -> usize {
        self.mlp1.last().map_or(2, |d| d.fan_out)
    }
}

struct Builder {
    offset: usize,
    blocks: Vec<Block>,
}

impl Builder {
    fn dense(&mut self, name: String, fan_in: usize, fan_out: usize) -> Dense {
        let start = self.offset;
        let d = Dense { w: start, b: start + fan_in * fan_out, fan_in, fan_out };
        self.offset += d.len();
        self.blocks.push(Block { name, range: start..self.offset });
        d
    }

    fn stack(&mut self, prefix: &str, input: usize, widths: &[usize]) -> Vec<Dense> {
        let mut prev = input;
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let d = self.dense(format!("{prefix}.{i}"), prev, w);
                prev = w;
                d
            })
            .collect()
    }

    fn tnet(&mut self, prefix: &str, dim: usize, point_widths: &[usize], fc_widths: &[usize]) -> TNet {
        let point = self.stack(&format!("{prefix}.point"), dim, point_widths);
        let pooled = point_widths.last().copied().unwrap_or(dim);
        let fc = self.stack(&format!("{prefix}.fc"), pooled, fc_widths);
        let last = fc_widths.last().copied().unwrap_or(pooled);
        let out = self.dense(format!("{prefix}.out"), last, dim * dim);
        TNet { dim, point, fc, out }
    }

    fn lstm_dir(&mut self, name: String, input: usize, hidden: usize) -> LstmDir {
        let start = self.offset;
        let d = LstmDir {
            w_ih: start,
            w_hh: start + input * 4 * hidden,
            b: start + input * 4 * hidden + hidden * 4 * hidden,
            input,
            hidden,
        };
        self.offset = d.b + 4 * hidden;
        self.blocks.push(Block { name, range: start..self.offset });
        d
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let mut b = Builder { offset: 0, blocks: Vec::new() };
        let input_tnet = cfg
            .use_input_transform
            .then(|| b.tnet("input_tnet", 2, &cfg.tnet_point_widths, &cfg.tnet_fc_widths));
        let mlp1 = b.stack("mlp1", 2, &cfg.point_mlp1);
        let d = cfg.point_mlp1.last().copied().unwrap_or(2);
        let feature_tnet = cfg
            .use_feature_transform
            .then(|| b.tnet("feature_tnet", d, &cfg.tnet_point_widths, &cfg.tnet_fc_widths));
        let mlp2 = b.stack("mlp2", d, &cfg.point_mlp2);
        let k = cfg.k_global;
        let refine = b.dense("refine".into(), k, k);

        let h = cfg.lstm_hidden;
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for l in 0..cfg.lstm_layers {
            let input = if l == 0 { 1 } else { 2 * h };
            let fwd = b.lstm_dir(format!("lstm.{l}.fwd"), input, h);
            let bwd = b.lstm_dir(format!("lstm.{l}.bwd"), input, h);
            lstm.push([fwd, bwd]);
        }
        let mut norms = Vec::new();
        for l in 0..cfg.lstm_layers.saturating_sub(1) {
            let start = b.offset;
            let ln = LayerNorm { gamma: start, beta: start + 2 * h, dim: 2 * h };
            b.offset += 4 * h;
            b.blocks.push(Block { name: format!("norm.{l}"), range: start..b.offset });
            norms.push(ln);
        }
        let readout = b.dense("readout".into(), k * cfg.m_frames * 2 * h, 2 * cfg.n_points);

        Layout {
            input_tnet,
            mlp1,
            feature_tnet,
            mlp2,
            refine,
            lstm,
            norms,
            readout,
            blocks: b.blocks,
            total: b.offset,
        }
    }
}
