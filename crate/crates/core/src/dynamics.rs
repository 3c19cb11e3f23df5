//! Kinematic bicycle model and fixed-step integration of a single vehicle.
//!
//! State is `(x, y, theta, v)`, inputs are steering angle and longitudinal
//! acceleration:
//!
//! ```text
//! x' = v cos(theta)   y' = v sin(theta)   theta' = v delta / L_w   v' = a_c
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Steering limit, rad.
pub const STEER_LIMIT: f64 = PI / 7.0;
pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 4.0;
/// Passenger-car wheelbase, m.
pub const DEFAULT_WHEELBASE: f64 = 3.0;
/// Integration sub-step used by [`step`], s.
pub const SUB_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    /// Unit heading vector.
    pub fn heading(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Steering angle, rad.
    pub delta: f64,
    /// Longitudinal acceleration, m/s^2.
    pub ac: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { delta: 0.0, ac: 0.0 };

    pub fn new(delta: f64, ac: f64) -> Self {
        Self { delta, ac }
    }

    pub fn channel(&self, k: usize) -> f64 {
        match k {
            0 => self.delta,
            _ => self.ac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub u_min: ControlInput,
    pub u_max: ControlInput,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: DEFAULT_WHEELBASE,
            u_min: ControlInput::new(-STEER_LIMIT, ACCEL_MIN),
            u_max: ControlInput::new(STEER_LIMIT, ACCEL_MAX),
        }
    }
}

impl VehicleParams {
    pub fn with_wheelbase(wheelbase: f64) -> Result<Self, ConfigError> {
        let p = Self {
            wheelbase,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.wheelbase > 0.0) {
            return Err(ConfigError::invalid("wheelbase", "must be > 0"));
        }
        if !(self.u_min.delta < self.u_max.delta && self.u_min.ac < self.u_max.ac) {
            return Err(ConfigError::invalid("input limits", "lower bound must be below upper"));
        }
        Ok(())
    }

    pub fn saturate(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            delta: u.delta.clamp(self.u_min.delta, self.u_max.delta),
            ac: u.ac.clamp(self.u_min.ac, self.u_max.ac),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub dv: f64,
}

pub fn derivative(s: &VehicleState, u: &ControlInput, p: &VehicleParams) -> StateDerivative {
    let (sin, cos) = s.theta.sin_cos();
    StateDerivative {
        dx: s.v * cos,
        dy: s.v * sin,
        dtheta: s.v * u.delta / p.wheelbase,
        dv: u.ac,
    }
}

fn offset(s: &VehicleState, d: &StateDerivative, h: f64) -> VehicleState {
    VehicleState {
        x: s.x + h * d.dx,
        y: s.y + h * d.dy,
        theta: s.theta + h * d.dtheta,
        v: s.v + h * d.dv,
    }
}

/// One classical RK4 step of length `h` (may be negative). No clamping or
/// wrapping is applied.
pub fn rk4(s: &VehicleState, u: &ControlInput, p: &VehicleParams, h: f64) -> VehicleState {
    let k1 = derivative(s, u, p);
    let k2 = derivative(&offset(s, &k1, h / 2.0), u, p);
    let k3 = derivative(&offset(s, &k2, h / 2.0), u, p);
    let k4 = derivative(&offset(s, &k3, h), u, p);
    let w = h / 6.0;
    VehicleState {
        x: s.x + w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        y: s.y + w * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy),
        theta: s.theta + w * (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta),
        v: s.v + w * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv),
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Advances the vehicle by `dt` with `u` held, in RK4 sub-steps of at most
/// [`SUB_STEP`]. Speed is clamped at zero and heading wrapped after every
/// sub-step.
pub fn step(s: &VehicleState, u: &ControlInput, p: &VehicleParams, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0);
    let n = ((dt / SUB_STEP) - 1e-9).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut cur = *s;
    for _ in 0..n {
        cur = rk4(&cur, u, p, h);
        cur.v = cur.v.max(0.0);
        cur.theta = wrap_angle(cur.theta);
    }
    cur
}
