//! Top-down two-link arm (uniform rods, no gravity) and a computed-torque
//! expert that tracks the inverse-kinematics solution for the target.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};

use super::{clamp_action, Controller, StepInput};
use crate::{Error, Result};

pub const LINK_MASS: f64 = 1.0;
pub const LINK_LENGTH: f64 = 0.5;
pub const TORQUE_BOUND: f64 = 2.0;
pub const CONTROL_WEIGHT: f64 = 0.01;
/// Target radius range for sampled targets.
pub const TARGET_RADIUS: (f64, f64) = (0.2, 0.9);

pub const POSITION_GAIN: f64 = 9.0;
pub const VELOCITY_GAIN: f64 = 6.0;
pub const DEADBAND: f64 = 1e-6;

// state layout: (x*, y*, q1, q1_dot, q2, q2_dot)

fn inertia_terms() -> (f64, f64, f64) {
    let (m, l) = (LINK_MASS, LINK_LENGTH);
    let rod = m * l * l / 12.0;
    let lc = l / 2.0;
    let a = 2.0 * rod + m * lc * lc + m * (l * l + lc * lc);
    let b = m * l * lc;
    let d = rod + m * lc * lc;
    (a, b, d)
}

pub fn mass_matrix(q2: f64) -> Matrix2<f64> {
    let (a, b, d) = inertia_terms();
    let c = q2.cos();
    Matrix2::new(a + 2.0 * b * c, d + b * c, d + b * c, d)
}

/// Coriolis and centrifugal torques `C(q, q_dot) q_dot`.
pub fn coriolis(q2: f64, q1_dot: f64, q2_dot: f64) -> Vector2<f64> {
    let (_, b, _) = inertia_terms();
    let s = q2.sin();
    Vector2::new(
        -b * s * (2.0 * q1_dot * q2_dot + q2_dot * q2_dot),
        b * s * q1_dot * q1_dot,
    )
}

pub fn end_effector(q1: f64, q2: f64) -> (f64, f64) {
    let l = LINK_LENGTH;
    (
        l * q1.cos() + l * (q1 + q2).cos(),
        l * q1.sin() + l * (q1 + q2).sin(),
    )
}

/// One semi-implicit Euler step: velocities first, then angles with the
/// updated velocities.
pub fn step(state: &[f64], torque: &[f64], dt: f64) -> Vec<f64> {
    let (q1, q1_dot, q2, q2_dot) = (state[2], state[3], state[4], state[5]);
    let tau = Vector2::new(torque[0], torque[1]);
    let rhs = tau - coriolis(q2, q1_dot, q2_dot);
    // the mass matrix is positive definite for every q2
    let acc = mass_matrix(q2)
        .cholesky()
        .expect("two-link mass matrix is positive definite")
        .solve(&rhs);
    let v1 = q1_dot + dt * acc[0];
    let v2 = q2_dot + dt * acc[1];
    vec![state[0], state[1], q1 + dt * v1, v1, q2 + dt * v2, v2]
}

pub fn cost(state: &[f64], torque: &[f64]) -> f64 {
    let (x, y) = end_effector(state[2], state[4]);
    let (dx, dy) = (x - state[0], y - state[1]);
    dx * dx + dy * dy + CONTROL_WEIGHT * (torque[0] * torque[0] + torque[1] * torque[1])
}

/// Wrap an angle difference into `[-pi, pi)`.
pub fn wrap(angle: f64) -> f64 {
    (angle + PI).rem_euclid(2.0 * PI) - PI
}

/// Joint angles reaching `(x, y)`; of the two elbow solutions, the one
/// closer to `current` is returned.
pub fn inverse_kinematics(x: f64, y: f64, current: (f64, f64)) -> Result<(f64, f64)> {
    let l = LINK_LENGTH;
    let r2 = x * x + y * y;
    let cos_q2 = (r2 - 2.0 * l * l) / (2.0 * l * l);
    if !(r2 > 0.0) || !(-1.0..=1.0).contains(&cos_q2) {
        return Err(Error::InvalidConfig(format!(
            "target ({x}, {y}) is outside the reachable workspace"
        )));
    }
    let best = [1.0f64, -1.0]
        .into_iter()
        .map(|sign| {
            let q2 = sign * cos_q2.acos();
            let q1 = y.atan2(x) - (l * q2.sin()).atan2(l + l * q2.cos());
            let dist = wrap(q1 - current.0).abs() + wrap(q2 - current.1).abs();
            (dist, q1, q2)
        })
        .fold((f64::INFINITY, 0.0, 0.0), |acc, c| if c.0 < acc.0 { c } else { acc });
    Ok((best.1, best.2))
}

/// Inverse kinematics plus PD computed torque, clamped to the torque bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComputedTorqueExpert;

impl ComputedTorqueExpert {
    pub fn action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (q1, q1_dot, q2, q2_dot) = (state[2], state[3], state[4], state[5]);
        let (t1, t2) = inverse_kinematics(state[0], state[1], (q1, q2))?;
        let acc = Vector2::new(
            POSITION_GAIN * wrap(t1 - q1) - VELOCITY_GAIN * q1_dot,
            POSITION_GAIN * wrap(t2 - q2) - VELOCITY_GAIN * q2_dot,
        );
        let tau = mass_matrix(q2) * acc + coriolis(q2, q1_dot, q2_dot);
        Ok(tau
            .iter()
            .map(|&u| {
                let u = clamp_action(u, TORQUE_BOUND);
                if u.abs() < DEADBAND {
                    0.0
                } else {
                    u
                }
            })
            .collect())
    }
}

impl Controller for ComputedTorqueExpert {
    fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        self.action(input.state)
    }
}
