//! Deterministic 2D mass-spring soft body in an axis-aligned box.
//!
//! The body is a ring of `n` particles connected by damped Hookean springs.
//! Time integration is semi-implicit Euler with a fixed number of
//! sub-iterations per frame; wall contact clamps positions into the box and
//! reflects the normal velocity component.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Trajectory, TrajectoryMeta, CORPUS_FORMAT_VERSION};
use crate::geom::{PointSet, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("a soft body needs at least 3 particles, got {0}")]
    TooFewParticles(usize),
    #[error("body of radius {radius} at ({cx}, {cy}) does not fit inside the world box")]
    BodyOutsideBox { cx: f64, cy: f64, radius: f64 },
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("simulation diverged at step {step} (non-finite state; dt too large?)")]
    Diverged { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n: usize,
    pub radius: f64,
    pub gravity: Vec2,
    pub wall_restitution: f64,
    /// Carried for completeness; particle-particle contacts are not modeled.
    pub particle_restitution: f64,
    pub friction: f64,
    pub spring_frequency_hz: f64,
    pub spring_damping_ratio: f64,
    pub dt: f64,
    pub substeps: usize,
    pub box_min: Vec2,
    pub box_max: Vec2,
    pub particle_mass: f64,
    /// Launch speed per unit of initial force magnitude.
    pub velocity_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n: 30,
            radius: 2.0,
            gravity: Vec2::new(0.0, -0.5),
            wall_restitution: 1.0,
            particle_restitution: 0.0,
            friction: 1.0,
            spring_frequency_hz: 1.0,
            spring_damping_ratio: 0.0,
            dt: 1.0 / 60.0,
            substeps: 8,
            box_min: Vec2::new(0.0, 0.0),
            box_max: Vec2::new(45.0, 45.0),
            particle_mass: 1.0,
            velocity_scale: 10.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if !(self.box_min.x < self.box_max.x && self.box_min.y < self.box_max.y) {
            return bad("box_min must be < box_max componentwise");
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad("dt must be > 0 and substeps >= 1");
        }
        if !(self.particle_mass > 0.0) {
            return bad("particle_mass must be > 0");
        }
        if !(self.spring_frequency_hz > 0.0) || self.spring_damping_ratio < 0.0 {
            return bad("spring frequency must be > 0 and damping ratio >= 0");
        }
        if !(0.0..=1.0).contains(&self.wall_restitution)
            || !(0.0..=1.0).contains(&self.particle_restitution)
        {
            return bad("restitution must lie in [0, 1]");
        }
        if self.friction < 0.0 {
            return bad("friction must be >= 0");
        }
        if !self.gravity.is_finite() || !(self.radius > 0.0) {
            return bad("gravity must be finite and radius > 0");
        }
        Ok(())
    }

    /// k = m (2 pi f)^2
    pub fn spring_stiffness(&self) -> f64 {
        let omega = 2.0 * PI * self.spring_frequency_hz;
        self.particle_mass * omega * omega
    }

    /// c = 2 m zeta (2 pi f)
    pub fn spring_damping(&self) -> f64 {
        2.0 * self.particle_mass * self.spring_damping_ratio * 2.0 * PI * self.spring_frequency_hz
    }

    pub fn substep_len(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitCondition {
    pub center: Vec2,
    pub force_magnitude: f64,
    pub direction_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftBodyState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub springs: Vec<Spring>,
    /// Whether any particle touched a wall during the last step.
    pub contact: bool,
}

impl SoftBodyState {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn point_set(&self) -> PointSet {
        PointSet::new(self.positions.clone())
    }
}

/// Cyclic index distance between particles `i` and `j` on a ring of `n`.
pub fn cyclic_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Ring neighbours closer than two fifths of the ring are connected.
pub fn is_connected(i: usize, j: usize, n: usize) -> bool {
    let d = cyclic_distance(i, j, n);
    d >= 1 && 5 * d < 2 * n
}

pub fn build_soft_body(config: &WorldConfig, init: &InitCondition) -> Result<SoftBodyState, SimError> {
    config.validate()?;
    let n = config.n;
    if n < 3 {
        return Err(SimError::TooFewParticles(n));
    }
    let c = init.center;
    let r = config.radius;
    if c.x - r < config.box_min.x
        || c.x + r > config.box_max.x
        || c.y - r < config.box_min.y
        || c.y + r > config.box_max.y
    {
        return Err(SimError::BodyOutsideBox { cx: c.x, cy: c.y, radius: r });
    }

    let step_angle = 2.0 * PI / n as f64;
    let positions: Vec<Vec2> = (0..n)
        .map(|i| c + r * Vec2::from_angle(step_angle * i as f64))
        .collect();

    let stiffness = config.spring_stiffness();
    let damping_coeff = config.spring_damping();
    let mut springs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if is_connected(i, j, n) {
                springs.push(Spring {
                    i,
                    j,
                    rest_length: (positions[j] - positions[i]).norm(),
                    stiffness,
                    damping_coeff,
                });
            }
        }
    }

    let state = SoftBodyState {
        velocities: vec![Vec2::ZERO; n],
        positions,
        springs,
        contact: false,
    };
    Ok(apply_initial_impulse(state, init, config.velocity_scale))
}

/// Sets every particle's velocity to `velocity_scale * |F| * (cos t, sin t)`.
pub fn apply_initial_impulse(mut state: SoftBodyState, init: &InitCondition, velocity_scale: f64) -> SoftBodyState {
    let v = velocity_scale * init.force_magnitude * Vec2::from_angle(init.direction_deg.to_radians());
    state.velocities.iter_mut().for_each(|vel| *vel = v);
    state
}

/// Force exerted on particle `spring.i`; particle `spring.j` receives the
/// exact negation.
pub fn spring_force(spring: &Spring, positions: &[Vec2], velocities: &[Vec2]) -> Vec2 {
    let d = positions[spring.j] - positions[spring.i];
    let len = d.norm();
    if len == 0.0 {
        return Vec2::ZERO;
    }
    let dir = d * (1.0 / len);
    let stretch = len - spring.rest_length;
    let rel_speed = (velocities[spring.j] - velocities[spring.i]).dot(dir);
    dir * (spring.stiffness * stretch + spring.damping_coeff * rel_speed)
}

/// Gravity plus spring forces for every particle, written into `forces`.
pub fn accumulate_forces(state: &SoftBodyState, config: &WorldConfig, forces: &mut [Vec2]) {
    let weight = config.gravity * config.particle_mass;
    forces.iter_mut().for_each(|f| *f = weight);
    for s in &state.springs {
        let f = spring_force(s, &state.positions, &state.velocities);
        forces[s.i] += f;
        forces[s.j] -= f;
    }
}

/// Clamps one coordinate into `[lo, hi]`, reflecting its velocity if it was
/// heading out. Returns whether a clamp happened.
fn clamp_axis(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64, restitution: f64) -> bool {
    if *pos < lo {
        *pos = lo;
        if *vel < 0.0 {
            *vel = -restitution * *vel;
        }
        true
    } else if *pos > hi {
        *pos = hi;
        if *vel > 0.0 {
            *vel = -restitution * *vel;
        }
        true
    } else {
        false
    }
}

/// Advances one frame of `config.dt` in place. Returns the contact flag.
pub fn step_in_place(state: &mut SoftBodyState, config: &WorldConfig, forces: &mut Vec<Vec2>) -> bool {
    let h = config.substep_len();
    let inv_mass = 1.0 / config.particle_mass;
    let friction_decay = 1.0 / (1.0 + config.friction * h);
    let (lo, hi) = (config.box_min, config.box_max);
    forces.resize(state.n(), Vec2::ZERO);
    let mut contact = false;

    for _ in 0..config.substeps {
        accumulate_forces(state, config, forces);
        for ((p, v), f) in state.positions.iter_mut().zip(state.velocities.iter_mut()).zip(forces.iter()) {
            *v += *f * (inv_mass * h);
            *p += *v * h;

            let hit_x = clamp_axis(&mut p.x, &mut v.x, lo.x, hi.x, config.wall_restitution);
            let hit_y = clamp_axis(&mut p.y, &mut v.y, lo.y, hi.y, config.wall_restitution);
            if hit_x {
                v.y *= friction_decay;
            }
            if hit_y {
                v.x *= friction_decay;
            }
            contact |= hit_x || hit_y;
        }
    }
    state.contact = contact;
    contact
}

pub fn step(state: &SoftBodyState, config: &WorldConfig) -> Result<SoftBodyState, SimError> {
    let mut next = state.clone();
    let mut forces = Vec::with_capacity(next.n());
    step_in_place(&mut next, config, &mut forces);
    if !state_is_finite(&next) {
        return Err(SimError::Diverged { step: 0 });
    }
    Ok(next)
}

fn state_is_finite(state: &SoftBodyState) -> bool {
    state.positions.iter().chain(state.velocities.iter()).all(|v| v.is_finite())
}

/// Simulates `steps` frames. Frame `k` is the state after `k + 1` steps.
/// The simulation itself is deterministic; `seed` is recorded as provenance.
pub fn run_trajectory(
    config: &WorldConfig,
    init: &InitCondition,
    steps: usize,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut state = build_soft_body(config, init)?;
    let mut frames = Vec::with_capacity(steps);
    let mut contact = Vec::with_capacity(steps);
    let mut forces = Vec::with_capacity(state.n());
    for k in 0..steps {
        let hit = step_in_place(&mut state, config, &mut forces);
        if !state_is_finite(&state) {
            return Err(SimError::Diverged { step: k });
        }
        frames.push(state.point_set());
        contact.push(hit);
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            version: CORPUS_FORMAT_VERSION,
            config: config.clone(),
            init: *init,
            seed,
        },
        frames,
        contact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn launch(center: Vec2, magnitude: f64, direction_deg: f64) -> InitCondition {
        InitCondition { center, force_magnitude: magnitude, direction_deg }
    }

    fn single_particle(p: Vec2, v: Vec2) -> SoftBodyState {
        SoftBodyState { positions: vec![p], velocities: vec![v], springs: vec![], contact: false }
    }

    #[test]
    fn default_constants() {
        let c = WorldConfig::default();
        assert_eq!(c.n, 30);
        assert_eq!(c.gravity, Vec2::new(0.0, -0.5));
        assert_eq!(c.friction, 1.0);
        assert_eq!(c.spring_frequency_hz, 1.0);
        assert_eq!(c.spring_damping_ratio, 0.0);
        assert_eq!(c.particle_restitution, 0.0);
        assert_eq!(c.wall_restitution, 1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn ring_layout() {
        let cfg = WorldConfig::default();
        let body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 180.0)).unwrap();
        assert_eq!(body.n(), 30);
        for (i, p) in body.positions.iter().enumerate() {
            let d = *p - Vec2::new(20.0, 20.0);
            assert!((d.norm() - 2.0).abs() < 1e-12);
            let angle = d.y.atan2(d.x).rem_euclid(2.0 * PI);
            let expected = (2.0 * PI * i as f64 / 30.0).rem_euclid(2.0 * PI);
            let diff = (angle - expected).abs();
            assert!(diff < 1e-9 || (diff - 2.0 * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn spring_count_matches_enumeration() {
        let cfg = WorldConfig::default();
        let body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 180.0)).unwrap();
        // Independent count: pairs with cyclic gap d where 1 <= d and d < 2n/5.
        let n = 30usize;
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    let gap = (j - i).min(n - (j - i)) as f64;
                    if gap >= 1.0 && gap < 2.0 * n as f64 / 5.0 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 330);
        assert_eq!(body.springs.len(), count);
        let mut pairs: Vec<_> = body.springs.iter().map(|s| (s.i, s.j)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), count);
        assert!(body.springs.iter().all(|s| s.i != s.j && s.rest_length > 0.0));
    }

    #[test]
    fn triangle_body() {
        let cfg = WorldConfig { n: 3, radius: 1.0, ..WorldConfig::default() };
        let body = build_soft_body(&cfg, &launch(Vec2::new(10.0, 10.0), 1.0, 180.0)).unwrap();
        assert_eq!(body.springs.len(), 3);
        for s in &body.springs {
            assert!((s.rest_length - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_mapping() {
        let cfg = WorldConfig { spring_damping_ratio: 0.5, particle_mass: 2.0, ..WorldConfig::default() };
        assert!((cfg.spring_stiffness() - 2.0 * (2.0 * PI).powi(2)).abs() < 1e-12);
        assert!((cfg.spring_damping() - 2.0 * 2.0 * 0.5 * 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_bodies() {
        let cfg = WorldConfig { n: 2, ..WorldConfig::default() };
        assert_eq!(
            build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 180.0)),
            Err(SimError::TooFewParticles(2))
        );
        let cfg = WorldConfig::default();
        assert!(matches!(
            build_soft_body(&cfg, &launch(Vec2::new(1.0, 20.0), 1.0, 180.0)),
            Err(SimError::BodyOutsideBox { .. })
        ));
    }

    #[test]
    fn impulse_examples() {
        let cfg = WorldConfig { velocity_scale: 1.0, ..WorldConfig::default() };
        let body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 180.0)).unwrap();
        let v = body.velocities[7];
        assert!((v.x + 1.0).abs() < 1e-15 && v.y.abs() < 1e-15);

        let body = apply_initial_impulse(body, &launch(Vec2::ZERO, 1.6, 270.0), 1.0);
        let v = body.velocities[0];
        assert!(v.x.abs() < 1e-15 && (v.y + 1.6).abs() < 1e-15);

        let before = body.positions.clone();
        let body = apply_initial_impulse(body, &launch(Vec2::ZERO, 1.3, 225.0), 2.0);
        let expected = 2.0 * 1.3 * (225f64).to_radians().cos();
        assert!((expected + 1.838_477_631_085_023_4).abs() < 1e-12);
        for v in &body.velocities {
            assert!((v.x - expected).abs() < 1e-12 && (v.y - expected).abs() < 1e-12);
        }
        assert_eq!(body.positions, before);
    }

    #[test]
    fn newton_third_law() {
        let cfg = WorldConfig { spring_damping_ratio: 0.3, ..WorldConfig::default() };
        let mut body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.2, 200.0)).unwrap();
        body.positions[3] += Vec2::new(0.3, -0.1);
        body.velocities[5] += Vec2::new(-0.7, 0.2);
        for s in &body.springs {
            let on_i = spring_force(s, &body.positions, &body.velocities);
            let flipped = Spring { i: s.j, j: s.i, ..*s };
            let on_j = spring_force(&flipped, &body.positions, &body.velocities);
            assert_eq!(on_i, -on_j);
        }
        let cfg0 = WorldConfig { gravity: Vec2::ZERO, ..cfg };
        let mut forces = vec![Vec2::ZERO; body.n()];
        accumulate_forces(&body, &cfg0, &mut forces);
        let total = forces.iter().fold(Vec2::ZERO, |a, &f| a + f);
        assert!(total.norm() < 1e-9);
    }

    #[test]
    fn free_flight_velocity_changes_by_gravity() {
        let cfg = WorldConfig::default();
        let body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 200.0)).unwrap();
        let next = step(&body, &cfg).unwrap();
        assert!(!next.contact);
        for (a, b) in body.velocities.iter().zip(&next.velocities) {
            let dv = *b - *a;
            assert!(dv.x.abs() < 1e-12);
            assert!((dv.y + 0.5 * cfg.dt).abs() < 1e-12);
        }
    }

    #[test]
    fn resting_particle_stays_at_rest() {
        let cfg = WorldConfig::default();
        let state = single_particle(Vec2::new(10.0, 0.0), Vec2::ZERO);
        let mut s = state.clone();
        for _ in 0..10 {
            s = step(&s, &cfg).unwrap();
        }
        assert_eq!(s.positions, state.positions);
        assert_eq!(s.velocities, state.velocities);
    }

    #[test]
    fn containment_and_determinism() {
        let cfg = WorldConfig::default();
        let init = launch(Vec2::new(4.0, 5.0), 1.6, 225.0);
        let a = run_trajectory(&cfg, &init, 400, 1).unwrap();
        let b = run_trajectory(&cfg, &init, 400, 1).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.contact, b.contact);
        assert!(a.contact.iter().any(|&c| c));
        for f in &a.frames {
            for p in f {
                assert!(p.x >= 0.0 && p.x <= 45.0 && p.y >= 0.0 && p.y <= 45.0);
            }
        }
    }

    #[test]
    fn trajectory_lengths_and_first_frame() {
        let cfg = WorldConfig::default();
        let init = launch(Vec2::new(20.0, 20.0), 1.0, 190.0);
        assert_eq!(run_trajectory(&cfg, &init, 600, 0).unwrap().frames.len(), 600);
        let one = run_trajectory(&cfg, &init, 1, 0).unwrap();
        let body = build_soft_body(&cfg, &init).unwrap();
        assert_eq!(one.frames[0], step(&body, &cfg).unwrap().point_set());
    }

    #[test]
    fn static_equilibrium() {
        let cfg = WorldConfig { gravity: Vec2::ZERO, ..WorldConfig::default() };
        let init = launch(Vec2::new(20.0, 20.0), 0.0, 180.0);
        let t = run_trajectory(&cfg, &init, 20, 0).unwrap();
        let body = build_soft_body(&cfg, &init).unwrap();
        for f in &t.frames {
            for (p, q) in f.iter().zip(&body.positions) {
                assert!((*p - *q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = WorldConfig { dt: 10.0, substeps: 1, ..WorldConfig::default() };
        let mut body = build_soft_body(&cfg, &launch(Vec2::new(20.0, 20.0), 1.0, 180.0)).unwrap();
        body.positions[0] = Vec2::new(f64::NAN, 20.0);
        assert!(matches!(step(&body, &cfg), Err(SimError::Diverged { .. })));
    }
}
