//! Pure-pursuit baseline and the three safety-filter architectures.
//!
//! Inputs are stacked per agent as `[delta_0, ac_0, delta_1, ac_1, ...]`;
//! channel `2i` is agent `i`'s steering and `2i + 1` its acceleration.
//!
//! * no-MPF solves one QP and trusts its actuators.
//! * full-MPF solves one QP whose rows see `u + w`, with `w` a first-order
//!   filter of the measured execution error `u_act - u*`.
//! * split-MPF runs one sub-controller per (agent, actuator). Each keeps its
//!   own `w` (its own channel pinned to zero) and its own copy of the last
//!   solution; only its ego channel is implemented.

use serde::{Deserialize, Serialize};

use crate::barrier::ConstraintRow;
use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::error::QpError;
use crate::exec::{self, Execution};
use crate::qp::{QpProblem, QpRow, QpSettings, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Lookahead distance per unit speed, s.
    pub lookahead_gain: f64,
    pub min_lookahead: f64,
    /// Speed-loop gain, 1/s.
    pub kp_speed: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            lookahead_gain: 0.9,
            min_lookahead: 1.0,
            kp_speed: 0.7,
        }
    }
}

/// What the baseline tracks for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGoal {
    pub v_des: f64,
    pub lat_target: f64,
}

/// Pure-pursuit steering toward a point on the target lane center one
/// lookahead ahead, plus a proportional speed loop. Saturated.
pub fn baseline(s: &VehicleState, goal: &AgentGoal, b: &BaselineParams, p: &VehicleParams) -> ControlInput {
    let look = (b.lookahead_gain * s.v).max(b.min_lookahead);
    let (sin, cos) = s.theta.sin_cos();
    let dy = goal.lat_target - s.y;
    let lx = cos * look + sin * dy;
    let ly = -sin * look + cos * dy;
    let curvature = 2.0 * ly / (lx * lx + ly * ly);
    p.saturate(ControlInput {
        delta: p.wheelbase * curvature,
        ac: b.kp_speed * (goal.v_des - s.v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    NoMpf,
    FullMpf,
    SplitMpf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::NoMpf, ControllerKind::FullMpf, ControllerKind::SplitMpf];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::NoMpf => "no-mpf",
            ControllerKind::FullMpf => "full-mpf",
            ControllerKind::SplitMpf => "split-mpf",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-mpf" => Ok(ControllerKind::NoMpf),
            "full-mpf" => Ok(ControllerKind::FullMpf),
            "split-mpf" => Ok(ControllerKind::SplitMpf),
            other => Err(format!(
                "unknown controller '{other}' (expected no-mpf, full-mpf or split-mpf)"
            )),
        }
    }
}

/// First-order proprioceptive filters `eps w' = -w + (u_act - u*)`,
/// advanced with the exact zero-order-hold discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WFilterBank {
    pub eps: f64,
    pub w: Vec<f64>,
    /// Channel held at zero (split-MPF ego channel).
    pub pinned: Option<usize>,
}

impl WFilterBank {
    pub fn new(eps: f64, n: usize, pinned: Option<usize>) -> Self {
        Self {
            eps,
            w: vec![0.0; n],
            pinned,
        }
    }

    pub fn advance(&mut self, dt: f64, u_act: &[f64], u_star: &[f64]) {
        let phi = (-dt / self.eps).exp();
        for ((w, ua), us) in self.w.iter_mut().zip(u_act).zip(u_star) {
            *w = phi * *w + (1.0 - phi) * (ua - us);
        }
        if let Some(k) = self.pinned {
            self.w[k] = 0.0;
        }
    }
}

/// Box bounds for the stacked input vector.
pub fn stacked_bounds(n_agents: usize, p: &VehicleParams) -> (Vec<f64>, Vec<f64>) {
    let lower = (0..2 * n_agents)
        .map(|k| if k % 2 == 0 { p.u_min.delta } else { p.u_min.ac })
        .collect();
    let upper = (0..2 * n_agents)
        .map(|k| if k % 2 == 0 { p.u_max.delta } else { p.u_max.ac })
        .collect();
    (lower, upper)
}

pub fn stack(u: &[ControlInput]) -> Vec<f64> {
    u.iter().flat_map(|c| [c.delta, c.ac]).collect()
}

pub fn unstack(u: &[f64]) -> Vec<ControlInput> {
    u.chunks_exact(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

/// The softened QP for a set of rows with no `w` offset.
pub fn build_problem(u0: &[f64], rows: &[ConstraintRow], p: &VehicleParams, qp: &QpSettings) -> QpProblem {
    let (lower, upper) = stacked_bounds(u0.len() / 2, p);
    QpProblem {
        u0: u0.to_vec(),
        rows: rows
            .iter()
            .map(|r| QpRow {
                a: r.a,
                coeffs: r
                    .coeffs
                    .iter()
                    .flat_map(|c| [(2 * c.agent, c.b_delta), (2 * c.agent + 1, c.b_ac)])
                    .collect(),
            })
            .collect(),
        lower,
        upper,
        slack_weight: qp.slack_weight,
        weights: if qp.steer_weight == 1.0 {
            Vec::new()
        } else {
            (0..u0.len())
                .map(|k| if k % 2 == 0 { qp.steer_weight } else { 1.0 })
                .collect()
        },
    }
}

/// Shifts every row by `b . w`, i.e. the rows now constrain `u + w`.
fn shift_rows(base: &QpProblem, w: &[f64]) -> QpProblem {
    let mut p = base.clone();
    for row in &mut p.rows {
        row.a += row.coeffs.iter().map(|&(i, b)| b * w[i]).sum::<f64>();
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Implemented (saturated) stacked control.
    pub u: Vec<f64>,
    /// QP solves that hit the iteration limit and fell back to the previous
    /// control.
    pub fallbacks: usize,
}

fn solve_or_fallback(problem: &QpProblem, qp: &QpSettings, prev: Option<&[f64]>) -> Result<(Vec<f64>, bool), QpError> {
    let sol = qp.solve(problem)?;
    match (sol.status, prev) {
        (QpStatus::Optimal, _) => Ok((sol.u_star, false)),
        (QpStatus::MaxIter, Some(prev)) => Ok((prev.to_vec(), true)),
        (QpStatus::MaxIter, None) => Ok((sol.u_star, true)),
    }
}

pub fn control_step_no_mpf(
    u0: &[f64],
    rows: &[ConstraintRow],
    p: &VehicleParams,
    qp: &QpSettings,
    u_star_prev: Option<&[f64]>,
) -> Result<StepOutput, QpError> {
    let problem = build_problem(u0, rows, p, qp);
    let (u, fell_back) = solve_or_fallback(&problem, qp, u_star_prev)?;
    Ok(StepOutput {
        u,
        fallbacks: fell_back as usize,
    })
}

/// Advances the shared filter with last period's measurement, then solves
/// one QP on `u + w`.
#[allow(clippy::too_many_arguments)]
pub fn control_step_full_mpf(
    u0: &[f64],
    rows: &[ConstraintRow],
    bank: &mut WFilterBank,
    u_act_prev: Option<&[f64]>,
    u_star_prev: Option<&[f64]>,
    dt: f64,
    p: &VehicleParams,
    qp: &QpSettings,
) -> Result<StepOutput, QpError> {
    if let (Some(ua), Some(us)) = (u_act_prev, u_star_prev) {
        bank.advance(dt, ua, us);
    }
    let problem = shift_rows(&build_problem(u0, rows, p, qp), &bank.w);
    let (u, fell_back) = solve_or_fallback(&problem, qp, u_star_prev)?;
    Ok(StepOutput {
        u,
        fallbacks: fell_back as usize,
    })
}

/// Per-(agent, actuator) sub-controller state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubController {
    pub bank: WFilterBank,
    /// This sub-controller's full solution from the previous period.
    pub local: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    pub subs: Vec<SubController>,
}

impl SplitState {
    pub fn new(eps: f64, n_channels: usize) -> Self {
        Self {
            subs: (0..n_channels)
                .map(|k| SubController {
                    bank: WFilterBank::new(eps, n_channels, Some(k)),
                    local: None,
                })
                .collect(),
        }
    }
}

/// Every sub-controller advances its filter from the same measured
/// `u_act_prev` and its own previous copy, solves its QP, and contributes
/// its ego channel.
#[allow(clippy::too_many_arguments)]
pub fn control_step_split_mpf(
    u0: &[f64],
    rows: &[ConstraintRow],
    split: &mut SplitState,
    u_act_prev: Option<&[f64]>,
    dt: f64,
    p: &VehicleParams,
    qp: &QpSettings,
    exec: Execution,
) -> Result<StepOutput, QpError> {
    let base = build_problem(u0, rows, p, qp);
    let results = exec::map_mut(exec, &mut split.subs, |_, sub| {
        if let (Some(ua), Some(local)) = (u_act_prev, sub.local.as_deref()) {
            let local = local.to_vec();
            sub.bank.advance(dt, ua, &local);
        }
        let problem = shift_rows(&base, &sub.bank.w);
        let (u, fell_back) = solve_or_fallback(&problem, qp, sub.local.as_deref())?;
        sub.local = Some(u);
        Ok::<bool, QpError>(fell_back)
    });
    let mut fallbacks = 0;
    for r in results {
        fallbacks += r? as usize;
    }
    let u = split
        .subs
        .iter()
        .enumerate()
        .map(|(k, s)| s.local.as_ref().expect("solved")[k])
        .collect();
    Ok(StepOutput { u, fallbacks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FilterState {
    NoMpf,
    Full(WFilterBank),
    Split(SplitState),
}

/// One controller instance driving one scenario run.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    kind: ControllerKind,
    params: VehicleParams,
    qp: QpSettings,
    exec: Execution,
    state: FilterState,
    u_star_prev: Option<Vec<f64>>,
    fallbacks: usize,
}

impl SafetyFilter {
    pub fn new(
        kind: ControllerKind,
        n_agents: usize,
        eps: f64,
        params: VehicleParams,
        qp: QpSettings,
        exec: Execution,
    ) -> Self {
        let n = 2 * n_agents;
        let state = match kind {
            ControllerKind::NoMpf => FilterState::NoMpf,
            ControllerKind::FullMpf => FilterState::Full(WFilterBank::new(eps, n, None)),
            ControllerKind::SplitMpf => FilterState::Split(SplitState::new(eps, n)),
        };
        Self {
            kind,
            params,
            qp,
            exec,
            state,
            u_star_prev: None,
            fallbacks: 0,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// One control period. `u_act_prev` is the measured actuator output over
    /// the previous period (`None` on the first call).
    pub fn step(
        &mut self,
        u0: &[f64],
        rows: &[ConstraintRow],
        u_act_prev: Option<&[f64]>,
        dt: f64,
    ) -> Result<Vec<f64>, QpError> {
        let prev = self.u_star_prev.as_deref();
        let out = match &mut self.state {
            FilterState::NoMpf => control_step_no_mpf(u0, rows, &self.params, &self.qp, prev)?,
            FilterState::Full(bank) => {
                control_step_full_mpf(u0, rows, bank, u_act_prev, prev, dt, &self.params, &self.qp)?
            }
            FilterState::Split(split) => {
                control_step_split_mpf(u0, rows, split, u_act_prev, dt, &self.params, &self.qp, self.exec)?
            }
        };
        if out.fallbacks > 0 {
            log::debug!(
                "{}: {} QP solve(s) fell back to the previous control",
                self.kind,
                out.fallbacks
            );
        }
        self.fallbacks += out.fallbacks;
        self.u_star_prev = Some(out.u.clone());
        Ok(out.u)
    }

    /// Per-channel compensation currently applied by the filter: the shared
    /// `w` for full-MPF, the mean over the non-owning sub-controllers for
    /// split-MPF, zeros for no-MPF.
    pub fn w_snapshot(&self, n_channels: usize) -> Vec<f64> {
        match &self.state {
            FilterState::NoMpf => vec![0.0; n_channels],
            FilterState::Full(bank) => bank.w.clone(),
            FilterState::Split(split) => {
                let others = (split.subs.len().max(2) - 1) as f64;
                (0..n_channels)
                    .map(|c| split.subs.iter().map(|s| s.bank.w[c]).sum::<f64>() / others)
                    .collect()
            }
        }
    }

    /// Split-MPF sub-controller states (for inspection and tests).
    pub fn split_state(&self) -> Option<&SplitState> {
        match &self.state {
            FilterState::Split(s) => Some(s),
            _ => None,
        }
    }

    pub fn full_bank(&self) -> Option<&WFilterBank> {
        match &self.state {
            FilterState::Full(b) => Some(b),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{AgentCoeff, RowTag};
    use approx::assert_abs_diff_eq;

    #[test]
    fn baseline_equilibrium_and_speed_loop() {
        let p = VehicleParams::default();
        let b = BaselineParams {
            kp_speed: 0.5,
            ..Default::default()
        };
        let goal = AgentGoal {
            v_des: 22.0,
            lat_target: 1.75,
        };
        let u = baseline(&VehicleState::new(0.0, 1.75, 0.0, 22.0), &goal, &b, &p);
        assert_eq!(u, ControlInput::ZERO);
        let u = baseline(&VehicleState::new(0.0, 1.75, 0.0, 21.0), &goal, &b, &p);
        assert_abs_diff_eq!(u.ac, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn baseline_pure_pursuit_geometry() {
        let p = VehicleParams::default();
        let b = BaselineParams {
            lookahead_gain: 0.5,
            min_lookahead: 1.0,
            kp_speed: 0.5,
        };
        let goal = AgentGoal {
            v_des: 20.0,
            lat_target: 3.5,
        };
        let u = baseline(&VehicleState::new(0.0, 0.0, 0.0, 20.0), &goal, &b, &p);
        assert_abs_diff_eq!(u.delta, 3.0 * 2.0 * 3.5 / (3.5 * 3.5 + 100.0), epsilon = 1e-12);
        assert_abs_diff_eq!(u.delta, 0.187_082, epsilon = 1e-6);
    }

    #[test]
    fn lookahead_floor() {
        let p = VehicleParams::default();
        let goal = AgentGoal {
            v_des: 1.0,
            lat_target: 0.5,
        };
        let u = baseline(
            &VehicleState::new(0.0, 0.0, 0.0, 0.0),
            &goal,
            &BaselineParams::default(),
            &p,
        );
        // one meter lookahead, 0.5 m offset
        assert_abs_diff_eq!(u.delta, (3.0 * 2.0 * 0.5 / 1.25f64).min(p.u_max.delta), epsilon = 1e-12);
    }

    #[test]
    fn filter_step_response_is_exact() {
        let mut bank = WFilterBank::new(0.2, 1, None);
        bank.advance(0.1, &[1.0], &[0.0]);
        assert_abs_diff_eq!(bank.w[0], 1.0 - (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(bank.w[0], 0.393_469, epsilon = 1e-6);
        for k in 2..=30 {
            bank.advance(0.1, &[1.0], &[0.0]);
            let exact = 1.0 - (-(k as f64) * 0.1 / 0.2).exp();
            assert!((bank.w[0] - exact).abs() <= 1e-12);
        }
    }

    #[test]
    fn pinned_channel_stays_zero() {
        let mut bank = WFilterBank::new(0.2, 3, Some(1));
        bank.advance(0.1, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        assert_eq!(bank.w[1], 0.0);
        assert!(bank.w[0] > 0.0);
    }

    fn conflict_row() -> ConstraintRow {
        ConstraintRow {
            a: -3.0,
            coeffs: vec![
                AgentCoeff {
                    agent: 0,
                    b_delta: 10.0,
                    b_ac: 1.0,
                },
                AgentCoeff {
                    agent: 1,
                    b_delta: -10.0,
                    b_ac: 1.0,
                },
            ],
            tag: RowTag::Pair { i: 0, j: 1 },
        }
    }

    #[test]
    fn no_rows_returns_baseline() {
        let p = VehicleParams::default();
        let u0 = vec![0.01, 0.5, -0.02, -1.0];
        let out = control_step_no_mpf(&u0, &[], &p, &QpSettings::default(), None).unwrap();
        assert_eq!(out.u, u0);
    }

    #[test]
    fn symmetric_conflict_gives_mirrored_steering() {
        let p = VehicleParams::default();
        let u0 = vec![0.0; 4];
        let out = control_step_no_mpf(&u0, &[conflict_row()], &p, &QpSettings::default(), None).unwrap();
        assert_abs_diff_eq!(out.u[0], -out.u[2], epsilon = 1e-12);
        assert_abs_diff_eq!(out.u[1], out.u[3], epsilon = 1e-12);
        assert!(out.u[0] > 0.0);
    }

    #[test]
    fn identity_actuators_make_all_controllers_agree() {
        let p = VehicleParams::default();
        let qp = QpSettings::default();
        let u0 = vec![0.0, 1.0, 0.0, -0.5];
        let rows = vec![conflict_row()];
        let mut filters: Vec<SafetyFilter> = ControllerKind::ALL
            .iter()
            .map(|&k| SafetyFilter::new(k, 2, 0.2, p, qp, Execution::Sequential))
            .collect();
        let mut u_act: Option<Vec<f64>> = None;
        for _ in 0..5 {
            let outs: Vec<Vec<f64>> = filters
                .iter_mut()
                .map(|f| f.step(&u0, &rows, u_act.as_deref(), 0.1).unwrap())
                .collect();
            assert_eq!(outs[0], outs[1]);
            assert_eq!(outs[0], outs[2]);
            u_act = Some(outs[0].clone());
        }
    }
}
