//! Actuator impairment operators and a frequency-domain passivity check.
//!
//! A [`DeltaModel`] describes what sits between a vehicle's commanded input
//! `u*` and what the plant actually receives, one operator per channel.
//! [`DeltaState`] is its running instance inside a simulation.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::ImpairmentError;

/// One channel's operator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelOp {
    #[default]
    Identity,
    Gain {
        k: f64,
    },
    Clip {
        lo: f64,
        hi: f64,
    },
    /// `1 / (tau s + 1)`
    FirstOrder {
        tau: f64,
    },
    PureDelay {
        delay: f64,
    },
    /// Steering only: the baseline steering replaces the filtered command.
    OnRails,
}

impl ChannelOp {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelOp::Identity => "identity",
            ChannelOp::Gain { .. } => "gain",
            ChannelOp::Clip { .. } => "clip",
            ChannelOp::FirstOrder { .. } => "first_order",
            ChannelOp::PureDelay { .. } => "pure_delay",
            ChannelOp::OnRails => "on_rails",
        }
    }

    /// Linear frequency model, when the operator has one.
    pub fn frequency_model(&self) -> Result<ChannelModel, ImpairmentError> {
        match *self {
            ChannelOp::Identity => Ok(ChannelModel::Lti(LtiChannel::gain(1.0))),
            ChannelOp::Gain { k } => Ok(ChannelModel::Lti(LtiChannel::gain(k))),
            ChannelOp::FirstOrder { tau } => Ok(ChannelModel::Lti(LtiChannel::first_order(tau)?)),
            ChannelOp::PureDelay { delay } => Ok(ChannelModel::Delay(delay)),
            ChannelOp::Clip { .. } | ChannelOp::OnRails => Err(ImpairmentError::NotLinear(self.name().into())),
        }
    }
}

/// When an impairment starts acting; before onset every channel is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "trigger", rename_all = "snake_case", deny_unknown_fields)]
pub enum Onset {
    #[default]
    Immediate,
    AtTime {
        t: f64,
    },
    /// Once the vehicle's x position reaches this value.
    AtPosition {
        x: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaModel {
    pub steer: ChannelOp,
    pub accel: ChannelOp,
    #[serde(default)]
    pub onset: Onset,
}

impl DeltaModel {
    pub const IDENTITY: DeltaModel = DeltaModel {
        steer: ChannelOp::Identity,
        accel: ChannelOp::Identity,
        onset: Onset::Immediate,
    };

    pub fn is_identity(&self) -> bool {
        self.steer == ChannelOp::Identity && self.accel == ChannelOp::Identity
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ChannelState {
    Stateless,
    Filter { alpha: f64, y: Option<f64> },
    Fifo { len: usize, buf: VecDeque<f64> },
}

impl ChannelState {
    fn new(op: &ChannelOp, dt: f64) -> Self {
        match *op {
            ChannelOp::FirstOrder { tau } => ChannelState::Filter {
                alpha: (-dt / tau).exp(),
                y: None,
            },
            ChannelOp::PureDelay { delay } => ChannelState::Fifo {
                len: (delay / dt).round() as usize,
                buf: VecDeque::new(),
            },
            _ => ChannelState::Stateless,
        }
    }
}

fn apply_channel(op: &ChannelOp, st: &mut ChannelState, u: f64, baseline: f64) -> f64 {
    match (op, st) {
        (ChannelOp::Identity, _) => u,
        (ChannelOp::Gain { k }, _) => k * u,
        (ChannelOp::Clip { lo, hi }, _) => u.clamp(*lo, *hi),
        (ChannelOp::OnRails, _) => baseline,
        (ChannelOp::FirstOrder { .. }, ChannelState::Filter { alpha, y }) => {
            // Starts at rest at the first command it sees.
            let prev = y.unwrap_or(u);
            let next = *alpha * prev + (1.0 - *alpha) * u;
            *y = Some(next);
            next
        }
        (ChannelOp::PureDelay { .. }, ChannelState::Fifo { len, buf }) => {
            if *len == 0 {
                return u;
            }
            if buf.is_empty() {
                buf.extend(std::iter::repeat_n(u, *len));
            }
            buf.push_back(u);
            buf.pop_front().expect("fifo holds len + 1 samples")
        }
        _ => unreachable!("channel state built from the same operator"),
    }
}

/// Running impairment for one vehicle. Call [`DeltaState::apply`] once per
/// simulation sub-step, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaState {
    model: DeltaModel,
    active: bool,
    steer: ChannelState,
    accel: ChannelState,
}

impl DeltaState {
    pub fn new(model: DeltaModel, sim_dt: f64) -> Self {
        Self {
            active: matches!(model.onset, Onset::Immediate),
            steer: ChannelState::new(&model.steer, sim_dt),
            accel: ChannelState::new(&model.accel, sim_dt),
            model,
        }
    }

    pub fn model(&self) -> &DeltaModel {
        &self.model
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Actual actuation for commanded `u_star` at time `t`; `u0` is the
    /// baseline command (used by on-rails steering).
    pub fn apply(&mut self, u_star: ControlInput, t: f64, s: &VehicleState, u0: ControlInput) -> ControlInput {
        if !self.active {
            self.active = match self.model.onset {
                Onset::Immediate => true,
                Onset::AtTime { t: t_on } => t >= t_on,
                Onset::AtPosition { x } => s.x >= x,
            };
            if !self.active {
                return u_star;
            }
        }
        ControlInput {
            delta: apply_channel(&self.model.steer, &mut self.steer, u_star.delta, u0.delta),
            ac: apply_channel(&self.model.accel, &mut self.accel, u_star.ac, u0.ac),
        }
    }
}

/// Scalar state-space channel `z' = A z + B u, y = C z + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiChannel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl LtiChannel {
    pub fn gain(k: f64) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: DVector::zeros(0),
            d: k,
        }
    }

    pub fn first_order(tau: f64) -> Result<Self, ImpairmentError> {
        if !(tau > 0.0) {
            return Err(ImpairmentError::Malformed("time constant must be > 0".into()));
        }
        Ok(Self {
            a: DMatrix::from_element(1, 1, -1.0 / tau),
            b: DVector::from_element(1, 1.0 / tau),
            c: DVector::from_element(1, 1.0),
            d: 0.0,
        })
    }

    fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn check(&self) -> Result<(), ImpairmentError> {
        let n = self.order();
        if self.a.ncols() != n || self.b.len() != n || self.c.len() != n {
            return Err(ImpairmentError::Malformed("inconsistent state-space dimensions".into()));
        }
        if n > 0 {
            let max_re = self
                .a
                .complex_eigenvalues()
                .iter()
                .map(|e| e.re)
                .fold(f64::NEG_INFINITY, f64::max);
            if max_re >= 0.0 {
                return Err(ImpairmentError::NotHurwitz(max_re));
            }
        }
        Ok(())
    }

    /// `C (j w I - A)^-1 B + D`
    pub fn response(&self, omega: f64) -> Complex64 {
        let n = self.order();
        if n == 0 {
            return Complex64::new(self.d, 0.0);
        }
        let m = DMatrix::from_fn(n, n, |i, k| {
            let diag = if i == k {
                Complex64::new(0.0, omega)
            } else {
                Complex64::new(0.0, 0.0)
            };
            diag - Complex64::new(self.a[(i, k)], 0.0)
        });
        let rhs = DVector::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m.lu().solve(&rhs).expect("j w I - A is invertible for Hurwitz A");
        let cx: Complex64 = (0..n).map(|i| x[i] * self.c[i]).sum();
        cx + self.d
    }
}

/// A channel's linear frequency behavior.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelModel {
    Lti(LtiChannel),
    Delay(f64),
}

impl ChannelModel {
    pub fn response(&self, omega: f64) -> Complex64 {
        match self {
            ChannelModel::Lti(c) => c.response(omega),
            ChannelModel::Delay(tau) => Complex64::from_polar(1.0, -omega * tau),
        }
    }

    /// `lim Re G(j w)` as `w -> inf`, when it exists.
    pub fn high_frequency_limit(&self) -> Option<f64> {
        match self {
            ChannelModel::Lti(c) => Some(c.d),
            ChannelModel::Delay(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Passivity {
    NotPassive {
        nu_hat: f64,
    },
    Passive,
    /// Input strictly passive with index `nu`.
    Isp {
        nu: f64,
    },
}

/// Sign tolerance on the estimated passivity index.
pub const PASSIVITY_TOL: f64 = 1e-9;

/// Logarithmic grid of `n` points from `lo` to `hi` rad/s.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// The default grid: 400 points over `[1e-3, 1e4]` rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e4, 400)
}

/// Estimated passivity index: the smallest real part over the grid and the
/// high-frequency limit.
pub fn passivity_index(model: &ChannelModel, grid: &[f64]) -> f64 {
    let grid_min = grid.iter().map(|&w| model.response(w).re).fold(f64::INFINITY, f64::min);
    match model.high_frequency_limit() {
        Some(d) => grid_min.min(d),
        None => grid_min,
    }
}

fn classify_index(nu: f64) -> Passivity {
    if nu > PASSIVITY_TOL {
        Passivity::Isp { nu }
    } else if nu >= -PASSIVITY_TOL {
        Passivity::Passive
    } else {
        Passivity::NotPassive { nu_hat: nu }
    }
}

/// Numerical ISP check for a scalar LTI channel: `inf_w Re G(j w) >= nu > 0`
/// on the grid. Evidence, not a certificate.
pub fn classify_passivity(c: &LtiChannel, grid: &[f64]) -> Result<Passivity, ImpairmentError> {
    c.check()?;
    Ok(classify_index(passivity_index(&ChannelModel::Lti(c.clone()), grid)))
}

/// Same check for any channel operator with a linear model (delays
/// included).
pub fn classify_channel(op: &ChannelOp, grid: &[f64]) -> Result<Passivity, ImpairmentError> {
    let model = op.frequency_model()?;
    if let ChannelModel::Lti(c) = &model {
        c.check()?;
    }
    // A delay's real part has no limit; make sure the grid resolves at least
    // one half period of cos(w tau).
    if let ChannelModel::Delay(tau) = model {
        let mut g = grid.to_vec();
        if tau > 0.0 {
            g.push(PI / tau);
        }
        return Ok(classify_index(passivity_index(&model, &g)));
    }
    Ok(classify_index(passivity_index(&model, grid)))
}

/// `Re` of the scalarized diagonal operator `b diag(G_k) b^T / |b|^2` at
/// frequency `omega`.
pub fn scalarized_real_part(b: &[f64], channels: &[ChannelModel], omega: f64) -> f64 {
    let bb: f64 = b.iter().map(|x| x * x).sum();
    b.iter()
        .zip(channels)
        .map(|(bi, ch)| bi * bi * ch.response(omega).re)
        .sum::<f64>()
        / bb
}
