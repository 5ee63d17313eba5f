use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::PointSet;

/// How the points inside a frame are (re)ordered before they reach a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum OrderingMethod {
    Identity,
    AscendingX,
    DescendingY,
    RandomShuffle { seed: u64 },
}

impl OrderingMethod {
    /// Short CLI name.
    pub fn name(&self) -> &'static str {
        match self {
            OrderingMethod::Identity => "identity",
            OrderingMethod::AscendingX => "asc-x",
            OrderingMethod::DescendingY => "desc-y",
            OrderingMethod::RandomShuffle { .. } => "shuffle",
        }
    }

    pub fn parse(name: &str, seed: u64) -> Option<OrderingMethod> {
        match name {
            "identity" => Some(OrderingMethod::Identity),
            "asc-x" | "ascending_x" => Some(OrderingMethod::AscendingX),
            "desc-y" | "descending_y" => Some(OrderingMethod::DescendingY),
            "shuffle" | "random_shuffle" => Some(OrderingMethod::RandomShuffle { seed }),
            _ => None,
        }
    }

    /// Same method with the shuffle seed re-derived for a sub-stream, so that
    /// different frames get independent permutations.
    pub fn for_stream(&self, stream: u64) -> OrderingMethod {
        match *self {
            OrderingMethod::RandomShuffle { seed } => OrderingMethod::RandomShuffle {
                seed: super::derive_seed(seed, stream),
            },
            other => other,
        }
    }
}

pub fn apply_ordering(points: &PointSet, method: OrderingMethod) -> PointSet {
    let mut out = points.0.clone();
    match method {
        OrderingMethod::Identity => {}
        OrderingMethod::AscendingX => out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))),
        OrderingMethod::DescendingY => out.sort_by(|a, b| b.y.total_cmp(&a.y).then(a.x.total_cmp(&b.x))),
        OrderingMethod::RandomShuffle { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            out.shuffle(&mut rng);
        }
    }
    PointSet::new(out)
}
