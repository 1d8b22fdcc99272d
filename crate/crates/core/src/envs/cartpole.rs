//! Cart-pole dynamics and a finite-horizon LQR expert.

use nalgebra::{Matrix4, RowVector4, Vector4};

use super::{clamp_action, Controller, StepInput};
use crate::{Error, Result};

pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const HALF_LENGTH: f64 = 0.5;
pub const GRAVITY: f64 = 9.8;
pub const FORCE_BOUND: f64 = 25.0;

/// State cost weights on `(x, x_dot, theta, theta_dot)`.
pub const STATE_WEIGHTS: [f64; 4] = [1.0, 0.1, 10.0, 0.1];
pub const CONTROL_WEIGHT: f64 = 0.001;

/// Continuous-time accelerations `(x_ddot, theta_ddot)`.
pub fn accelerations(state: &[f64], force: f64) -> (f64, f64) {
    let total = CART_MASS + POLE_MASS;
    let (theta, theta_dot) = (state[2], state[3]);
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS * HALF_LENGTH * theta_dot * theta_dot * sin) / total;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
    let x_acc = temp - POLE_MASS * HALF_LENGTH * theta_acc * cos / total;
    (x_acc, theta_acc)
}

/// One forward-Euler step.
pub fn step(state: &[f64], force: f64, dt: f64) -> Vec<f64> {
    let (x_acc, theta_acc) = accelerations(state, force);
    vec![
        state[0] + dt * state[1],
        state[1] + dt * x_acc,
        state[2] + dt * state[3],
        state[3] + dt * theta_acc,
    ]
}

pub fn cost(state: &[f64], force: f64) -> f64 {
    STATE_WEIGHTS
        .iter()
        .zip(state)
        .map(|(w, s)| w * s * s)
        .sum::<f64>()
        + CONTROL_WEIGHT * force * force
}

/// Euler-discretized linearization about the upright equilibrium.
pub fn linearization(dt: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let total = CART_MASS + POLE_MASS;
    let denom = HALF_LENGTH * (4.0 / 3.0 - POLE_MASS / total);
    // theta_ddot = (g theta - F / total) / denom
    let th_theta = GRAVITY / denom;
    let th_force = -1.0 / (total * denom);
    // x_ddot = F / total - m_p l theta_ddot / total
    let k = POLE_MASS * HALF_LENGTH / total;
    let x_theta = -k * th_theta;
    let x_force = 1.0 / total - k * th_force;
    #[rustfmt::skip]
    let ac = Matrix4::new(
        0.0, 1.0, 0.0,      0.0,
        0.0, 0.0, x_theta,  0.0,
        0.0, 0.0, 0.0,      1.0,
        0.0, 0.0, th_theta, 0.0,
    );
    let bc = Vector4::new(0.0, x_force, 0.0, th_force);
    (Matrix4::identity() + ac * dt, bc * dt)
}

/// Time-varying LQR gains `u_t = -K_t s_t` for `t = 1..=steps`, from the
/// backward Riccati recursion with terminal weight equal to the stage weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrExpert {
    gains: Vec<RowVector4<f64>>,
}

impl LqrExpert {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        Self::with_weights(dt, steps, STATE_WEIGHTS, CONTROL_WEIGHT)
    }

    pub fn with_weights(dt: f64, steps: usize, state_weights: [f64; 4], control_weight: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("LQR horizon must be positive".into()));
        }
        let (a, b) = linearization(dt);
        let q = Matrix4::from_diagonal(&Vector4::from(state_weights));
        let mut p = q;
        let mut gains = vec![RowVector4::zeros(); steps];
        for t in (0..steps).rev() {
            let pb = p * b;
            let k = (pb.transpose() * a) / (control_weight + (b.transpose() * pb)[0]);
            p = q + a.transpose() * p * (a - b * k);
            p = (p + p.transpose()) * 0.5;
            gains[t] = k;
        }
        Ok(Self { gains })
    }

    /// Gain at 1-based step `t`; the last gain is reused past the horizon.
    pub fn gain(&self, t: usize) -> RowVector4<f64> {
        self.gains[t.clamp(1, self.gains.len()) - 1]
    }

    pub fn action(&self, t: usize, state: &[f64]) -> f64 {
        let s = Vector4::from_column_slice(state);
        clamp_action(-(self.gain(t) * s)[0], FORCE_BOUND)
    }
}

impl Controller for LqrExpert {
    fn act(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        Ok(vec![self.action(input.t, input.state)])
    }
}
