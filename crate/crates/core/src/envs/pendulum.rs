//! Torque-limited pendulum swing-up as in Gymnasium's Pendulum-v1.
//! `theta = 0` is upright.

use std::f64::consts::PI;

use rand::Rng;

pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;

#[derive(Debug, Clone, Default)]
pub struct Pendulum {
    /// `(theta, theta_dot)`
    pub state: [f64; 2],
}

/// Angle wrapped into `[−π, π)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Per-step cost for state `(theta, theta_dot)` and applied torque `u`.
pub fn cost(theta: f64, theta_dot: f64, u: f64) -> f64 {
    let th = angle_normalize(theta);
    th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u
}

impl Pendulum {
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state = [rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)];
    }

    pub fn observe(&self) -> Vec<f64> {
        let [th, thdot] = self.state;
        vec![th.cos(), th.sin(), thdot]
    }

    /// Mechanical energy per unit inertia, `½θ̇² + (3g/2l)·cos θ`.
    pub fn energy(&self) -> f64 {
        let [th, thdot] = self.state;
        0.5 * thdot * thdot + 1.5 * GRAVITY / LENGTH * th.cos()
    }

    pub fn step(&mut self, torque: f64) -> (f64, bool) {
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        let [th, thdot] = self.state;
        let reward = -cost(th, thdot, u);
        let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * th.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let new_thdot = (thdot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        let new_th = th + new_thdot * DT;
        self.state = [new_th, new_thdot];
        (reward, false)
    }
}
