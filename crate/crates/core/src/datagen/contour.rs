use thiserror::Error;

use crate::geom::{PointSet, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContourError {
    #[error("contour needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("contour has zero perimeter")]
    ZeroPerimeter,
    #[error("requested point count must be at least 1")]
    NoPoints,
}

/// Places `n` points at equal arc-length spacing along the closed polyline
/// `polygon`, starting at vertex 0 and walking in vertex order.
pub fn resample_contour(polygon: &[Vec2], n: usize) -> Result<PointSet, ContourError> {
    if polygon.len() < 3 {
        return Err(ContourError::TooFewVertices(polygon.len()));
    }
    if n == 0 {
        return Err(ContourError::NoPoints);
    }
    let k = polygon.len();
    // cumulative[i] = arc length from vertex 0 to vertex i; cumulative[k] closes the loop.
    let mut cumulative = Vec::with_capacity(k + 1);
    cumulative.push(0.0);
    for i in 0..k {
        let seg = (polygon[(i + 1) % k] - polygon[i]).norm();
        cumulative.push(cumulative[i] + seg);
    }
    let perimeter = cumulative[k];
    if !(perimeter > 0.0) {
        return Err(ContourError::ZeroPerimeter);
    }

    let spacing = perimeter / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = spacing * i as f64;
        while seg + 1 < k && cumulative[seg + 1] <= s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let a = polygon[seg];
        let b = polygon[(seg + 1) % k];
        let t = if len > 0.0 { (s - cumulative[seg]) / len } else { 0.0 };
        out.push(a + (b - a) * t);
    }
    Ok(PointSet::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square() -> Vec<Vec2> {
        vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
    }

    fn close(a: Vec2, b: Vec2) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn square_corners() {
        let out = resample_contour(&square(), 4).unwrap();
        for (p, q) in out.iter().zip(square()) {
            assert!(close(*p, q));
        }
    }

    #[test]
    fn square_corners_and_midpoints() {
        // Walking the perimeter at spacing 0.5 from (0,0).
        let expected = [
            (0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (1.0, 0.5),
            (1.0, 1.0), (0.5, 1.0), (0.0, 1.0), (0.0, 0.5),
        ];
        let out = resample_contour(&square(), 8).unwrap();
        assert_eq!(out.len(), 8);
        for (p, &(x, y)) in out.iter().zip(expected.iter()) {
            assert!(close(*p, Vec2::new(x, y)), "{p:?} vs ({x}, {y})");
        }
    }

    fn dist_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
        (a + ab * t - p).norm()
    }

    #[test]
    fn hundred_gon_uniform_spacing() {
        let poly: Vec<Vec2> = (0..100)
            .map(|i| Vec2::from_angle(2.0 * PI * i as f64 / 100.0) * 3.0)
            .collect();
        let out = resample_contour(&poly, 30).unwrap();
        let gaps: Vec<f64> = (0..30).map(|i| (out[(i + 1) % 30] - out[i]).norm()).collect();
        let mean = gaps.iter().sum::<f64>() / 30.0;
        for g in &gaps {
            assert!((g - mean).abs() / mean < 0.01);
        }
        for p in out.iter() {
            let d = (0..100)
                .map(|i| dist_to_segment(*p, poly[i], poly[(i + 1) % 100]))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            resample_contour(&[Vec2::ZERO, Vec2::new(1.0, 0.0)], 4),
            Err(ContourError::TooFewVertices(2))
        );
        assert_eq!(resample_contour(&[Vec2::ZERO; 4], 4), Err(ContourError::ZeroPerimeter));
    }
}
