use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize, Trajectory, ROLLOUT_HORIZON};
use crate::geom::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub trajectory: usize,
    pub start: usize,
}

/// `m` normalized input frames followed by the frames the model must roll
/// out to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub inputs: Vec<PointSet>,
    pub targets: Vec<PointSet>,
    pub source: SampleSource,
}

impl TrainSample {
    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampledWindows {
    pub samples: Vec<TrainSample>,
    /// How many collision windows were requested but not available.
    pub collision_shortfall: usize,
    pub normal_shortfall: usize,
}

/// Start indices of every `window`-long span that overlaps (or avoids) a
/// contact frame.
pub(crate) fn qualifying_starts(contact: &[bool], window: usize) -> (Vec<usize>, Vec<usize>) {
    if contact.len() < window {
        return (Vec::new(), Vec::new());
    }
    // prefix[i] = contacts in contact[..i]
    let mut prefix = Vec::with_capacity(contact.len() + 1);
    prefix.push(0usize);
    for &c in contact {
        prefix.push(prefix.last().unwrap() + c as usize);
    }
    let (mut hits, mut clean) = (Vec::new(), Vec::new());
    for s in 0..=(contact.len() - window) {
        if prefix[s + window] > prefix[s] {
            hits.push(s);
        } else {
            clean.push(s);
        }
    }
    (hits, clean)
}

fn choose<R: rand::Rng>(rng: &mut R, pool: &[usize], amount: usize) -> Vec<usize> {
    let take = amount.min(pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Draws training windows of `m + 8` frames from one trajectory: up to
/// `n_collision` windows overlapping a wall contact and up to `n_normal`
/// windows without one, each uniformly among the qualifying start indices
/// (without replacement). Frames are normalized with the trajectory's box.
pub fn sample_subsequences(
    traj: &Trajectory,
    trajectory_id: usize,
    m: usize,
    n_collision: usize,
    n_normal: usize,
    seed: u64,
) -> SampledWindows {
    let window = m + ROLLOUT_HORIZON;
    if traj.len() < window || m == 0 {
        return SampledWindows {
            samples: Vec::new(),
            collision_shortfall: n_collision,
            normal_shortfall: n_normal,
        };
    }
    let (hits, clean) = qualifying_starts(&traj.contact, window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hit_starts = choose(&mut rng, &hits, n_collision);
    let clean_starts = choose(&mut rng, &clean, n_normal);

    let cfg = &traj.meta.config;
    let make = |start: usize| {
        let frames: Vec<PointSet> = traj.frames[start..start + window]
            .iter()
            .map(|f| normalize(f, cfg.box_min, cfg.box_max).0)
            .collect();
        let (inputs, targets) = frames.split_at(m);
        TrainSample {
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            source: SampleSource { trajectory: trajectory_id, start },
        }
    };

    SampledWindows {
        collision_shortfall: n_collision - hit_starts.len(),
        normal_shortfall: n_normal - clean_starts.len(),
        samples: hit_starts.iter().chain(clean_starts.iter()).map(|&s| make(s)).collect(),
    }
}
