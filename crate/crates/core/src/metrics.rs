//! Chamfer-distance family: the training loss kernel, position error and
//! centroid-aligned shape error. All distances are squared Euclidean.

use thiserror::Error;

use crate::geom::{PointSet, Vec2};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("point set is empty")]
    Empty,
    #[error("point sets differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
}

/// Chamfer distance with the nearest-neighbour assignment that produced it.
/// `p_to_q[i]` is the index in `Q` closest to `P[i]` (lowest index on ties),
/// and symmetrically for `q_to_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferMatch {
    pub value: f64,
    pub p_to_q: Vec<usize>,
    pub q_to_p: Vec<usize>,
}

/// Single pass over the pairwise distance table, tracking row and column
/// minima at once.
pub fn chamfer_match(p: &[Vec2], q: &[Vec2]) -> Result<ChamferMatch, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut row_best = vec![f64::INFINITY; p.len()];
    let mut col_best = vec![f64::INFINITY; q.len()];
    let mut p_to_q = vec![0usize; p.len()];
    let mut q_to_p = vec![0usize; q.len()];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            let d = a.dist_sq(b);
            if d < row_best[i] {
                row_best[i] = d;
                p_to_q[i] = j;
            }
            if d < col_best[j] {
                col_best[j] = d;
                q_to_p[j] = i;
            }
        }
    }
    let value = row_best.iter().sum::<f64>() + col_best.iter().sum::<f64>();
    Ok(ChamferMatch { value, p_to_q, q_to_p })
}

pub fn chamfer(p: &PointSet, q: &PointSet) -> Result<f64, MetricsError> {
    chamfer_match(p.points(), q.points()).map(|m| m.value)
}

/// Chamfer distance divided by the (shared) point count.
pub fn position_error(p: &PointSet, q: &PointSet) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::SizeMismatch(p.len(), q.len()));
    }
    Ok(chamfer(p, q)? / p.len() as f64)
}

pub fn centroid(p: &PointSet) -> Result<Vec2, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum = p.iter().fold(Vec2::ZERO, |acc, &v| acc + v);
    Ok(sum * (1.0 / p.len() as f64))
}

/// Position error after moving both centroids to the origin.
pub fn shape_error(p: &PointSet, q: &PointSet) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::SizeMismatch(p.len(), q.len()));
    }
    let pc = p.translated(-centroid(p)?);
    let qc = q.translated(-centroid(q)?);
    position_error(&pc, &qc)
}

/// Gradient of `chamfer(P, Q)` with respect to the coordinates of `Q`,
/// using the argmin assignment of `m` (flat `[dx0, dy0, dx1, ...]`).
pub fn chamfer_grad_q(p: &[Vec2], q: &[Vec2], m: &ChamferMatch) -> Vec<f64> {
    let mut g = vec![0.0; 2 * q.len()];
    // x in P pulls its nearest y in Q: d/dy ||x - y||^2 = 2 (y - x)
    for (i, &j) in m.p_to_q.iter().enumerate() {
        let d = q[j] - p[i];
        g[2 * j] += 2.0 * d.x;
        g[2 * j + 1] += 2.0 * d.y;
    }
    for (j, &i) in m.q_to_p.iter().enumerate() {
        let d = q[j] - p[i];
        g[2 * j] += 2.0 * d.x;
        g[2 * j + 1] += 2.0 * d.y;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(v: &[(f64, f64)]) -> PointSet {
        v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = ps(&[(0.3, 0.1), (2.0, -1.0)]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&ps(&[(0.0, 0.0)]), &ps(&[(3.0, 4.0)])).unwrap(), 50.0);
        assert_eq!(chamfer(&ps(&[(0.0, 0.0), (1.0, 0.0)]), &ps(&[(0.0, 1.0), (1.0, 1.0)])).unwrap(), 4.0);
        assert_eq!(chamfer(&PointSet::default(), &a), Err(MetricsError::Empty));
    }

    #[test]
    fn position_error_examples() {
        assert_eq!(position_error(&ps(&[(0.0, 0.0)]), &ps(&[(3.0, 4.0)])).unwrap(), 50.0);
        assert_eq!(
            position_error(&ps(&[(0.0, 0.0)]), &ps(&[(3.0, 4.0), (1.0, 1.0)])),
            Err(MetricsError::SizeMismatch(1, 2))
        );
    }

    #[test]
    fn shape_error_examples() {
        let sq = ps(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert!(shape_error(&sq, &sq.translated(Vec2::new(7.0, -3.0))).unwrap().abs() < 1e-12);
        let big = ps(&[(-0.5, -0.5), (1.5, -0.5), (1.5, 1.5), (-0.5, 1.5)]);
        assert!((shape_error(&sq, &big).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&ps(&[(0.0, 0.0), (2.0, 0.0)])).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(centroid(&ps(&[(0.7, -2.0)])).unwrap(), Vec2::new(0.7, -2.0));
        assert_eq!(centroid(&PointSet::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let m = chamfer_match(&[Vec2::new(0.0, 0.0)], &[Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)]).unwrap();
        assert_eq!(m.p_to_q, vec![0]);
    }

    fn arb_set(n: usize) -> impl Strategy<Value = PointSet> {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n).prop_map(|v| ps(&v))
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_free(p in arb_set(12), q in arb_set(12), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let c = chamfer(&p, &q).unwrap();
            prop_assert_eq!(c, chamfer(&q, &p).unwrap());
            prop_assert!(c >= 0.0);
            let mut shuffled = p.0.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let c2 = chamfer(&PointSet::new(shuffled), &q).unwrap();
            prop_assert!((c - c2).abs() <= 1e-12 * c.max(1.0));
        }

        #[test]
        fn translation_properties(p in arb_set(9), q in arb_set(9), tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
            let t = Vec2::new(tx, ty);
            let s = shape_error(&p, &q).unwrap();
            prop_assert!((shape_error(&p, &q.translated(t)).unwrap() - s).abs() < 1e-9);
            let e = position_error(&p, &q).unwrap();
            prop_assert!((position_error(&p.translated(t), &q.translated(t)).unwrap() - e).abs() < 1e-9);
        }

        #[test]
        fn analytic_gradient_matches_differences(p in arb_set(7), q in arb_set(7)) {
            let m = chamfer_match(p.points(), q.points()).unwrap();
            let g = chamfer_grad_q(p.points(), q.points(), &m);
            let eps = 1e-7;
            for k in 0..14 {
                let mut qp = q.to_flat();
                qp[k] += eps;
                let mut qm = q.to_flat();
                qm[k] -= eps;
                let mp = chamfer_match(p.points(), PointSet::from_flat(&qp).points()).unwrap();
                let mm = chamfer_match(p.points(), PointSet::from_flat(&qm).points()).unwrap();
                // Skip coordinates where the perturbation flips an assignment.
                if mp.p_to_q != m.p_to_q || mp.q_to_p != m.q_to_p || mm.p_to_q != m.p_to_q || mm.q_to_p != m.q_to_p {
                    continue;
                }
                let fd = (mp.value - mm.value) / (2.0 * eps);
                prop_assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()));
            }
        }
    }
}
