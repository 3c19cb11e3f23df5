//! Closed-loop simulation of one world under one controller.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::coordination::{speed_offsets, LaneIntent};
use super::metrics::{LoopTimeStats, MetricsTracker, RunMetrics, TrackedAgent};
use super::world::World;
use crate::barrier::{assemble_rows, min_h_per_agent, RowTag};
use crate::controllers::{baseline, stack, AgentGoal, ControllerKind, SafetyFilter};
use crate::dynamics::{step, ControlInput, VehicleState};
use crate::error::ScenarioError;
use crate::exec::Execution;
use crate::impairment::DeltaState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub run_id: u64,
    /// Keep a per-step trajectory log.
    pub record: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            run_id: 0,
            record: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub state: VehicleState,
    pub u0: ControlInput,
    pub u_star: ControlInput,
    /// Actuator output at the end of the period.
    pub u_act: ControlInput,
    /// Filter compensation `[steer, accel]` used this period.
    pub w: [f64; 2],
    /// Smallest reference barrier involving this agent during the period.
    pub h0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub run: u64,
    pub controller: ControllerKind,
    pub step: usize,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    /// Rows binding at `u* + w`.
    pub active: Vec<RowTag>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Minimum logged `h0` over all agents and steps.
    pub fn min_h0(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.agents.iter().map(|a| a.h0))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub controller: ControllerKind,
    pub metrics: RunMetrics,
    pub timing: LoopTimeStats,
    pub log: Option<TrajectoryLog>,
}

const ACTIVE_TOL: f64 = 1e-6;

/// Simulates `world` with the controller named in `cfg.controller.kind`.
///
/// The plant advances at `sim_dt`; the controller runs every `ctrl_dt` and
/// its output is held in between. Lane changes are commanded when a
/// vehicle reaches the start of the swap zone. The run ends when every
/// vehicle is `exit_margin` past the zone or the horizon is reached.
pub fn run(world: &World, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let c = &cfg.controller;
    let n = world.n_agents();
    let params = c.vehicle_params();
    let e_ctrl = c.ellipse.inflated();
    let e_ref = c.ellipse;
    let road = &s.road;
    let exec = if c.parallel_subcontrollers {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let mut filter = SafetyFilter::new(c.kind, n, c.eps, params, c.qp, exec);
    let mut deltas: Vec<DeltaState> = world
        .agents
        .iter()
        .map(|a| DeltaState::new(a.impairment, s.sim_dt))
        .collect();
    let mut states = world.initial_states();
    let mut commanded = vec![false; n];
    let mut tracker = MetricsTracker::new(
        world
            .agents
            .iter()
            .map(|a| TrackedAgent {
                v_des: a.v_des,
                swap_dir: (a.target_lane as f64 - a.start_lane as f64),
            })
            .collect(),
        s.swap_zone,
        road.clone(),
        s.vehicle_half_width,
    );

    let intents: Vec<LaneIntent> = world
        .agents
        .iter()
        .map(|a| LaneIntent {
            start_lane: a.start_lane,
            target_lane: a.target_lane,
        })
        .collect();
    let sub_steps = s.steps_per_ctrl();
    let exit_x = s.swap_zone[1] + s.exit_margin;
    let mut u_act_prev: Option<Vec<f64>> = None;
    let mut log = opts.record.then(TrajectoryLog::default);
    let mut loop_ms = Vec::new();
    let mut h_agent = vec![f64::INFINITY; n];
    let mut h_interval = vec![f64::INFINITY; n];
    let mut on_road = Vec::with_capacity(n);
    let mut on_road_states = Vec::with_capacity(n);
    let mut h_on_road = Vec::with_capacity(n);
    let mut prev_fallbacks = 0;

    let mut k = 0usize;
    loop {
        let t = k as f64 * s.ctrl_dt;
        if t >= s.horizon - 1e-9 || states.iter().all(|v| v.x >= exit_x) {
            break;
        }
        let offsets = speed_offsets(&states, &intents, road, s.swap_zone, &c.yielding);
        let u0: Vec<ControlInput> = (0..n)
            .map(|i| {
                let a = &world.agents[i];
                commanded[i] |= states[i].x >= s.swap_zone[0];
                let lane = if commanded[i] { a.target_lane } else { a.start_lane };
                let goal = AgentGoal {
                    v_des: (a.v_des + offsets[i]).max(0.0),
                    lat_target: road.lane_centers[lane],
                };
                baseline(&states[i], &goal, &c.baseline, &params)
            })
            .collect();
        let u0_stacked = stack(&u0);

        let started = Instant::now();
        let rows = assemble_rows(&states, road, &e_ctrl, &c.gains, &params, &c.pruning);
        let u_star = filter.step(&u0_stacked, &rows, u_act_prev.as_deref(), s.ctrl_dt)?;
        loop_ms.push(started.elapsed().as_secs_f64() * 1e3);
        let fallbacks = filter.fallbacks() - prev_fallbacks;
        prev_fallbacks = filter.fallbacks();
        let w = filter.w_snapshot(2 * n);

        let ac: Vec<f64> = (0..n).map(|i| u_star[2 * i + 1]).collect();
        tracker.observe_commands(&ac, fallbacks);

        let start_states = states.clone();
        h_interval.fill(f64::INFINITY);
        let mut u_act = vec![ControlInput::ZERO; n];
        for m in 0..sub_steps {
            let ts = t + m as f64 * s.sim_dt;
            let prev = states.clone();
            for i in 0..n {
                let cmd = ControlInput::new(u_star[2 * i], u_star[2 * i + 1]);
                u_act[i] = deltas[i].apply(cmd, ts, &states[i], u0[i]);
                states[i] = step(&states[i], &u_act[i], &params, s.sim_dt);
            }
            // vehicles past the exit line have left the measured section
            on_road.clear();
            on_road.extend((0..n).filter(|&i| states[i].x < exit_x));
            on_road_states.clear();
            on_road_states.extend(on_road.iter().map(|&i| states[i]));
            h_on_road.clear();
            h_on_road.resize(on_road.len(), f64::INFINITY);
            min_h_per_agent(&on_road_states, &e_ref, &mut h_on_road);
            h_agent.fill(f64::INFINITY);
            for (&i, &h) in on_road.iter().zip(&h_on_road) {
                h_agent[i] = h;
            }
            let h_min = h_agent.iter().copied().fold(f64::INFINITY, f64::min);
            for (acc, h) in h_interval.iter_mut().zip(&h_agent) {
                *acc = acc.min(*h);
            }
            tracker.observe_states(ts + s.sim_dt, &prev, &states, h_min);
        }
        let measured = stack(&u_act);

        if let Some(log) = log.as_mut() {
            let active = rows
                .iter()
                .filter(|r| {
                    let shifted: Vec<f64> = u_star.iter().zip(&w).map(|(u, w)| u + w).collect();
                    r.eval(&shifted) <= ACTIVE_TOL
                })
                .map(|r| r.tag)
                .collect();
            log.records.push(StepRecord {
                run: opts.run_id,
                controller: c.kind,
                step: k,
                t,
                agents: (0..n)
                    .map(|i| AgentRecord {
                        state: start_states[i],
                        u0: u0[i],
                        u_star: ControlInput::new(u_star[2 * i], u_star[2 * i + 1]),
                        u_act: u_act[i],
                        w: [w[2 * i], w[2 * i + 1]],
                        h0: h_interval[i],
                    })
                    .collect(),
                active,
            });
        }
        u_act_prev = Some(measured);
        k += 1;
    }

    Ok(RunOutput {
        controller: c.kind,
        metrics: tracker.finish(),
        timing: LoopTimeStats::from_samples(&loop_ms),
        log,
    })
}

/// Runs `world` under a specific controller, overriding the config's kind.
pub fn run_with(
    world: &World,
    cfg: &ScenarioConfig,
    kind: ControllerKind,
    opts: &RunOptions,
) -> Result<RunOutput, ScenarioError> {
    let mut cfg = cfg.clone();
    cfg.controller.kind = kind;
    run(world, &cfg, opts)
}
