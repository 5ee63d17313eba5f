//! Dataset construction: trajectory corpora, training windows, normalization,
//! point-ordering transforms, contour resampling and the corpus file format.

mod contour;
mod io;
mod ordering;
mod sampling;

pub use contour::{resample_contour, ContourError};
pub use io::{read_corpus, read_trajectory, write_corpus, write_trajectory, CorpusIoError};
pub use ordering::{apply_ordering, OrderingMethod};
pub use sampling::{sample_subsequences, SampleSource, SampledWindows, TrainSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointSet, Vec2};
use crate::par::{self, ExecMode};
use crate::sim::{run_trajectory, InitCondition, SimError, WorldConfig};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Number of future frames every training window carries.
pub const ROLLOUT_HORIZON: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub version: u32,
    pub config: WorldConfig,
    pub init: InitCondition,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub frames: Vec<PointSet>,
    pub contact: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Which side of the held-out partition initial conditions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
    Any,
}

/// Discrete grid of initial conditions. Centers use a `center_step` lattice
/// over `[center_min, center_max]` on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitGrid {
    pub center_min: f64,
    pub center_max: f64,
    pub center_step: f64,
    pub magnitudes: Vec<f64>,
    pub directions_deg: Vec<f64>,
    /// One grid point in `holdout_every` is reserved for the test split.
    pub holdout_every: u64,
    pub split: Split,
}

impl Default for InitGrid {
    fn default() -> Self {
        Self {
            center_min: 2.9,
            center_max: 42.1,
            center_step: 0.1,
            magnitudes: vec![1.0, 1.15, 1.3, 1.45, 1.6],
            directions_deg: (0..19).map(|i| 180.0 + 5.0 * i as f64).collect(),
            holdout_every: 8,
            split: Split::Any,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPoint {
    pub cx: usize,
    pub cy: usize,
    pub magnitude: usize,
    pub direction: usize,
}

impl InitGrid {
    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn centers_per_axis(&self) -> usize {
        ((self.center_max - self.center_min) / self.center_step + 1e-9).floor() as usize + 1
    }

    pub fn condition(&self, gp: GridPoint) -> InitCondition {
        InitCondition {
            center: Vec2::new(
                self.center_min + gp.cx as f64 * self.center_step,
                self.center_min + gp.cy as f64 * self.center_step,
            ),
            force_magnitude: self.magnitudes[gp.magnitude],
            direction_deg: self.directions_deg[gp.direction],
        }
    }

    pub fn is_holdout(&self, gp: GridPoint) -> bool {
        let key = (gp.cx as u64)
            | (gp.cy as u64) << 16
            | (gp.magnitude as u64) << 32
            | (gp.direction as u64) << 48;
        self.holdout_every > 0 && splitmix64(key) % self.holdout_every == 0
    }

    fn in_split(&self, gp: GridPoint) -> bool {
        match self.split {
            Split::Any => true,
            Split::Test => self.is_holdout(gp),
            Split::Train => !self.is_holdout(gp),
        }
    }

    /// Uniform draw over the grid points belonging to `self.split`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (GridPoint, InitCondition) {
        let per_axis = self.centers_per_axis();
        loop {
            let gp = GridPoint {
                cx: rng.gen_range(0..per_axis),
                cy: rng.gen_range(0..per_axis),
                magnitude: rng.gen_range(0..self.magnitudes.len()),
                direction: rng.gen_range(0..self.directions_deg.len()),
            };
            if self.in_split(gp) {
                return (gp, self.condition(gp));
            }
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent per-item seed derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5151)))
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus size must be at least 1")]
    Empty,
    #[error("trajectory {index} (init {init:?}) failed: {source}")]
    Sim {
        index: usize,
        init: InitCondition,
        #[source]
        source: SimError,
    },
}

/// Generates `count` trajectories with initial conditions drawn from `grid`.
/// Trajectory `i` depends only on `(config, grid, steps, master_seed, i)`.
pub fn generate_corpus(
    config: &WorldConfig,
    grid: &InitGrid,
    count: usize,
    steps: usize,
    master_seed: u64,
    mode: ExecMode,
) -> Result<Vec<Trajectory>, CorpusError> {
    if count == 0 {
        return Err(CorpusError::Empty);
    }
    let results = par::map_range(mode, count, |i| {
        let seed = derive_seed(master_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, init) = grid.sample(&mut rng);
        run_trajectory(config, &init, steps, seed).map_err(|source| CorpusError::Sim { index: i, init, source })
    });
    results.into_iter().collect()
}

/// Affine map of `points` from `[box_min, box_max]` onto the unit square.
/// The flag is true when any input lies outside the box.
pub fn normalize(points: &PointSet, box_min: Vec2, box_max: Vec2) -> (PointSet, bool) {
    let span = box_max - box_min;
    let mut outside = false;
    let out = points
        .iter()
        .map(|&p| {
            let q = Vec2::new((p.x - box_min.x) / span.x, (p.y - box_min.y) / span.y);
            outside |= !(0.0..=1.0).contains(&q.x) || !(0.0..=1.0).contains(&q.y);
            q
        })
        .collect();
    (out, outside)
}

pub fn denormalize(points: &PointSet, box_min: Vec2, box_max: Vec2) -> PointSet {
    let span = box_max - box_min;
    points
        .iter()
        .map(|&q| Vec2::new(box_min.x + q.x * span.x, box_min.y + q.y * span.y))
        .collect()
}

/// Normalizes every frame of a trajectory with its own world box.
pub fn normalize_frames(traj: &Trajectory) -> Vec<PointSet> {
    let cfg = &traj.meta.config;
    traj.frames.iter().map(|f| normalize(f, cfg.box_min, cfg.box_max).0).collect()
}
