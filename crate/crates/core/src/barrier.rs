//! Elliptic inter-vehicle barriers, road-boundary barriers, and the affine
//! constraint rows obtained by combining a barrier with its first two time
//! derivatives: `h'' + l1 h' + l0 h = a + sum_k b_k . u_k >= 0`.
//!
//! The ellipse barrier depends on the ego heading, so the steering input
//! already shows up in `h'`. Rows are the first-order expansion of
//! `h'' + l1 h' + l0 h` in the inputs around `u = 0` (steering held
//! constant): `a` is its value at zero input and the coefficients are its
//! exact input gradient there.

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::ConfigError;

/// Below this focal-to-center distance the norm gradient is replaced by the
/// ego heading.
const SINGULAR_DIST: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipseParams {
    /// Semi-minor axis, m.
    pub r: f64,
    /// Major/minor axis ratio, > 1.
    pub alpha: f64,
    /// Relative inflation of `r` used by the controller.
    pub margin: f64,
}

impl Default for EllipseParams {
    fn default() -> Self {
        Self {
            r: 2.0,
            alpha: 3.0,
            margin: 0.1,
        }
    }
}

impl EllipseParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.r > 0.0) {
            return Err(ConfigError::invalid("ellipse.r", "must be > 0"));
        }
        if !(self.alpha > 1.0) {
            return Err(ConfigError::invalid("ellipse.alpha", "must be > 1"));
        }
        if !(self.margin >= 0.0) {
            return Err(ConfigError::invalid("ellipse.margin", "must be >= 0"));
        }
        Ok(())
    }

    /// Focal distance from the center.
    pub fn rho(&self) -> f64 {
        self.r * (self.alpha * self.alpha - 1.0).sqrt()
    }

    pub fn semi_major(&self) -> f64 {
        self.alpha * self.r
    }

    /// The enlarged ellipse the controller protects (`r * (1 + margin)`,
    /// same axis ratio, no further margin).
    pub fn inflated(&self) -> EllipseParams {
        EllipseParams {
            r: self.r * (1.0 + self.margin),
            alpha: self.alpha,
            margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadGeometry {
    /// Right boundary lateral position, m.
    pub rb_r: f64,
    /// Left boundary lateral position, m.
    pub rb_l: f64,
    pub lane_width: f64,
    pub lane_centers: Vec<f64>,
}

impl Default for RoadGeometry {
    /// Two 3.5 m lanes, right lane centered at -1.75 m.
    fn default() -> Self {
        Self {
            rb_r: -3.5,
            rb_l: 3.5,
            lane_width: 3.5,
            lane_centers: vec![-1.75, 1.75],
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rb_r < self.rb_l) {
            return Err(ConfigError::invalid("road", "rb_r must be < rb_l"));
        }
        if self.lane_centers.len() != 2 {
            return Err(ConfigError::invalid(
                "road.lane_centers",
                "exactly two lanes are supported",
            ));
        }
        Ok(())
    }

    /// Lateral position of the divider between lane 0 and lane 1.
    pub fn divider(&self) -> f64 {
        0.5 * (self.lane_centers[0] + self.lane_centers[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfGains {
    /// First-order barrier rate (generic filter API only).
    pub lambda: f64,
    pub l0: f64,
    pub l1: f64,
}

impl Default for CbfGains {
    /// Real closed-loop roots at -0.4 and -2.0 1/s.
    fn default() -> Self {
        Self {
            lambda: 0.4,
            l0: 0.8,
            l1: 2.4,
        }
    }
}

impl CbfGains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.l0 > 0.0 && self.l1 > 0.0) {
            return Err(ConfigError::invalid("gains", "l0 and l1 must be > 0"));
        }
        if self.l1 * self.l1 < 4.0 * self.l0 {
            return Err(ConfigError::invalid("gains", "s^2 + l1 s + l0 must have real roots"));
        }
        if !(self.lambda > 0.0) {
            return Err(ConfigError::invalid("gains.lambda", "must be > 0"));
        }
        Ok(())
    }

    /// Roots of `s^2 + l1 s + l0`, slowest first.
    pub fn roots(&self) -> (f64, f64) {
        let disc = (self.l1 * self.l1 - 4.0 * self.l0).max(0.0).sqrt();
        ((-self.l1 + disc) / 2.0, (-self.l1 - disc) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

/// Where a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTag {
    /// Agent `j` must stay outside agent `i`'s ellipse.
    Pair {
        i: usize,
        j: usize,
    },
    Road {
        agent: usize,
        side: Side,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentCoeff {
    pub agent: usize,
    pub b_delta: f64,
    pub b_ac: f64,
}

/// `a + sum over coeffs of (b_delta * delta + b_ac * ac) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a: f64,
    pub coeffs: Vec<AgentCoeff>,
    pub tag: RowTag,
}

impl ConstraintRow {
    /// Evaluates `a + b . u` for a stacked input vector `[delta_0, ac_0, ...]`.
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.a
            + self
                .coeffs
                .iter()
                .map(|c| c.b_delta * u[2 * c.agent] + c.b_ac * u[2 * c.agent + 1])
                .sum::<f64>()
    }

    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.coeffs.iter().map(|c| c.agent)
    }
}

type V2 = [f64; 2];

#[inline]
fn dot(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn norm(a: V2) -> f64 {
    a[0].hypot(a[1])
}

/// Focal-sum ellipse barrier: negative iff `sj`'s center lies strictly
/// inside the ellipse of semi-minor axis `e.r` centered on `si`.
pub fn ellipse_h(si: &VehicleState, sj: &VehicleState, e: &EllipseParams) -> f64 {
    let rho = e.rho();
    let phi = si.heading();
    let dx = si.x - sj.x;
    let dy = si.y - sj.y;
    let d_plus = [dx + rho * phi[0], dy + rho * phi[1]];
    let d_minus = [dx - rho * phi[0], dy - rho * phi[1]];
    norm(d_plus) + norm(d_minus) - 2.0 * e.alpha * e.r
}

/// Affine row for the pair `(i, j)`; `e` is the ellipse the controller
/// protects (pass [`EllipseParams::inflated`] for the margin).
pub fn pair_constraint_row(
    i: usize,
    si: &VehicleState,
    j: usize,
    sj: &VehicleState,
    e: &EllipseParams,
    g: &CbfGains,
    p: &VehicleParams,
) -> ConstraintRow {
    let rho = e.rho();
    let phi_i = si.heading();
    let perp_i = [-phi_i[1], phi_i[0]];
    let phi_j = sj.heading();
    let perp_j = [-phi_j[1], phi_j[0]];

    let rel = [si.x - sj.x, si.y - sj.y];
    // Relative velocity at zero steering; identical for both focal points.
    let vel = [si.v * phi_i[0] - sj.v * phi_j[0], si.v * phi_i[1] - sj.v * phi_j[1]];
    let vel2 = dot(vel, vel);
    // d(focal velocity)/d(delta_i) is +/- rho * (v_i / L) * perp_i.
    let k_i = si.v / p.wheelbase;
    let dvel_ddelta = [rho * k_i * perp_i[0], rho * k_i * perp_i[1]];

    let mut h = -2.0 * e.alpha * e.r;
    let mut h_dot = 0.0;
    let mut h_ddot = 0.0;
    let mut n_sum = [0.0; 2];
    let mut b_delta_i = 0.0;

    for sign in [1.0, -1.0] {
        let d = [rel[0] + sign * rho * phi_i[0], rel[1] + sign * rho * phi_i[1]];
        let dist = norm(d);
        h += dist;
        let (n, curvature) = if dist < SINGULAR_DIST {
            (phi_i, None)
        } else {
            ([d[0] / dist, d[1] / dist], Some(dist))
        };
        let n_vel = dot(n, vel);
        h_dot += n_vel;
        n_sum[0] += n[0];
        n_sum[1] += n[1];
        // l1 * d(h')/d(delta_i)
        b_delta_i += g.l1 * sign * dot(n, dvel_ddelta);
        if let Some(dist) = curvature {
            h_ddot += (vel2 - n_vel * n_vel) / dist;
            // gradient of (|d'|^2 - (n.d')^2)/|d| along d(d')/d(delta_i)
            let tangential = [vel[0] - n_vel * n[0], vel[1] - n_vel * n[1]];
            b_delta_i += 2.0 * sign * dot(tangential, dvel_ddelta) / dist;
        }
    }
    // Input-driven part of the ego acceleration: a_i phi_i + v_i^2/L delta_i perp_i.
    b_delta_i += si.v * k_i * dot(n_sum, perp_i);
    let b_ac_i = dot(n_sum, phi_i);
    let b_delta_j = -(sj.v * sj.v / p.wheelbase) * dot(n_sum, perp_j);
    let b_ac_j = -dot(n_sum, phi_j);

    ConstraintRow {
        a: h_ddot + g.l1 * h_dot + g.l0 * h,
        coeffs: vec![
            AgentCoeff {
                agent: i,
                b_delta: b_delta_i,
                b_ac: b_ac_i,
            },
            AgentCoeff {
                agent: j,
                b_delta: b_delta_j,
                b_ac: b_ac_j,
            },
        ],
        tag: RowTag::Pair { i, j },
    }
}

/// Right (`y >= rb_r`) and left (`y <= rb_l`) boundary rows for one agent.
pub fn road_constraint_rows(
    agent: usize,
    s: &VehicleState,
    road: &RoadGeometry,
    g: &CbfGains,
    p: &VehicleParams,
) -> (ConstraintRow, ConstraintRow) {
    let (sin, cos) = s.theta.sin_cos();
    let b_delta = s.v * s.v * cos / p.wheelbase;
    let right = ConstraintRow {
        a: g.l1 * s.v * sin + g.l0 * (s.y - road.rb_r),
        coeffs: vec![AgentCoeff {
            agent,
            b_delta,
            b_ac: sin,
        }],
        tag: RowTag::Road {
            agent,
            side: Side::Right,
        },
    };
    let left = ConstraintRow {
        a: -g.l1 * s.v * sin + g.l0 * (road.rb_l - s.y),
        coeffs: vec![AgentCoeff {
            agent,
            b_delta: -b_delta,
            b_ac: -sin,
        }],
        tag: RowTag::Road {
            agent,
            side: Side::Left,
        },
    };
    (right, left)
}

/// Pruning thresholds for [`assemble_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RowPruning {
    /// Pairs further apart than this along x generate no rows, m.
    pub max_longitudinal: f64,
    /// Rows whose barrier value exceeds this are omitted, m.
    pub max_h: f64,
}

impl Default for RowPruning {
    fn default() -> Self {
        Self {
            max_longitudinal: 50.0,
            max_h: 20.0,
        }
    }
}

/// All pair rows (both orderings) and road rows for the current states, in
/// a deterministic order: pairs by `(i, j)`, then road rows by agent.
pub fn assemble_rows(
    states: &[VehicleState],
    road: &RoadGeometry,
    e_ctrl: &EllipseParams,
    g: &CbfGains,
    p: &VehicleParams,
    pruning: &RowPruning,
) -> Vec<ConstraintRow> {
    let n = states.len();
    let mut rows = Vec::with_capacity(n * 8);
    for i in 0..n {
        for j in 0..n {
            if i == j || (states[i].x - states[j].x).abs() > pruning.max_longitudinal {
                continue;
            }
            if ellipse_h(&states[i], &states[j], e_ctrl) > pruning.max_h {
                continue;
            }
            rows.push(pair_constraint_row(i, &states[i], j, &states[j], e_ctrl, g, p));
        }
    }
    for (k, s) in states.iter().enumerate() {
        let (r, l) = road_constraint_rows(k, s, road, g, p);
        rows.push(r);
        rows.push(l);
    }
    rows
}

/// Minimum reference barrier over all ordered pairs, per agent (an agent's
/// value covers both its own ellipse and the others' ellipses around it).
pub fn min_h_per_agent(states: &[VehicleState], e_ref: &EllipseParams, out: &mut [f64]) {
    let n = states.len();
    // Beyond this separation the barrier is at least 2*dist - 2*alpha*r > 0.
    let cutoff = 2.0 * e_ref.semi_major() + 10.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if (states[i].x - states[j].x).abs() > cutoff {
                continue;
            }
            let h = ellipse_h(&states[i], &states[j], e_ref).min(ellipse_h(&states[j], &states[i], e_ref));
            out[i] = out[i].min(h);
            out[j] = out[j].min(h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn e() -> EllipseParams {
        EllipseParams {
            r: 2.0,
            alpha: 3.0,
            margin: 0.0,
        }
    }

    #[test]
    fn ellipse_reference_points() {
        let si = VehicleState::new(0.0, 0.0, 0.0, 20.0);
        let h = ellipse_h(&si, &si, &e());
        assert_abs_diff_eq!(h, 2.0 * 2.0 * 8f64.sqrt() - 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h, -0.686_29, epsilon = 1e-5);
        let vertex = VehicleState::new(6.0, 0.0, 0.3, 20.0);
        assert_abs_diff_eq!(ellipse_h(&si, &vertex, &e()), 0.0, epsilon = 1e-12);
        let co_vertex = VehicleState::new(0.0, 2.0, 0.0, 20.0);
        assert_abs_diff_eq!(ellipse_h(&si, &co_vertex, &e()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rho_and_inflation() {
        let p = EllipseParams::default();
        assert_abs_diff_eq!(p.rho(), 2.0 * 8f64.sqrt(), epsilon = 1e-15);
        let c = p.inflated();
        assert_abs_diff_eq!(c.r, 2.2, epsilon = 1e-15);
        assert_eq!(c.alpha, 3.0);
        assert!(EllipseParams { alpha: 1.0, ..p }.validate().is_err());
    }

    #[test]
    fn gains_roots() {
        let g = CbfGains::default();
        let (slow, fast) = g.roots();
        assert_abs_diff_eq!(slow, -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(fast, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(-1.0 / slow, 2.5, epsilon = 1e-12);
        assert!(CbfGains { l0: 2.0, ..g }.validate().is_err());
    }

    #[test]
    fn far_pair_is_inactive() {
        let si = VehicleState::new(0.0, 0.0, 0.0, 20.0);
        let sj = VehicleState::new(40.0, 0.0, 0.0, 20.0);
        let row = pair_constraint_row(0, &si, 1, &sj, &e(), &CbfGains::default(), &VehicleParams::default());
        assert!(row.a > 0.0);
    }

    #[test]
    fn head_on_pair_acceleration_coefficients_mirror() {
        let si = VehicleState::new(0.0, 0.0, 0.0, 20.0);
        let sj = VehicleState::new(30.0, 0.0, PI, 20.0);
        let row = pair_constraint_row(0, &si, 1, &sj, &e(), &CbfGains::default(), &VehicleParams::default());
        let (bi, bj) = (row.coeffs[0], row.coeffs[1]);
        // Both vehicles accelerating toward each other shrink the barrier equally.
        assert_abs_diff_eq!(bi.b_ac, bj.b_ac, epsilon = 1e-12);
        assert!(bi.b_ac < 0.0);
        // The closing speed makes the drift negative relative to a static pair.
        assert!(row.a < CbfGains::default().l0 * ellipse_h(&si, &sj, &e()));
    }

    #[test]
    fn road_rows_example() {
        let road = RoadGeometry::default();
        let s = VehicleState::new(0.0, road.rb_r + 2.0, 0.0, 20.0);
        let (r, l) = road_constraint_rows(3, &s, &road, &CbfGains::default(), &VehicleParams::default());
        assert_abs_diff_eq!(r.a, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.coeffs[0].b_delta, 133.333_333_333, epsilon = 1e-6);
        assert_eq!(r.coeffs[0].b_ac, 0.0);
        assert_eq!(l.coeffs[0].b_ac, 0.0);
        assert_eq!(
            r.tag,
            RowTag::Road {
                agent: 3,
                side: Side::Right
            }
        );
    }

    #[test]
    fn singular_focal_point_uses_heading() {
        let si = VehicleState::new(0.0, 0.0, 0.4, 20.0);
        let rho = e().rho();
        let sj = VehicleState::new(rho * 0.4f64.cos(), rho * 0.4f64.sin(), 0.0, 18.0);
        let row = pair_constraint_row(0, &si, 1, &sj, &e(), &CbfGains::default(), &VehicleParams::default());
        assert!(row.a.is_finite());
        assert!(row.coeffs.iter().all(|c| c.b_delta.is_finite() && c.b_ac.is_finite()));
    }

    #[test]
    fn assemble_prunes_far_pairs() {
        let states = vec![
            VehicleState::new(0.0, -1.75, 0.0, 20.0),
            VehicleState::new(12.0, -1.75, 0.0, 20.0),
            VehicleState::new(200.0, 1.75, 0.0, 20.0),
        ];
        let rows = assemble_rows(
            &states,
            &RoadGeometry::default(),
            &EllipseParams::default().inflated(),
            &CbfGains::default(),
            &VehicleParams::default(),
            &RowPruning::default(),
        );
        let pairs = rows.iter().filter(|r| matches!(r.tag, RowTag::Pair { .. })).count();
        assert_eq!(pairs, 2);
        assert_eq!(rows.len(), 2 + 6);
    }
}
