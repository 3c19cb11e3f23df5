//! Initial conditions for one lane-swap run.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ImpairmentCase, ScenarioConfig};
use crate::barrier::min_h_per_agent;
use crate::dynamics::VehicleState;
use crate::error::ScenarioError;
use crate::impairment::{ChannelOp, DeltaModel, Onset};

/// Lane index: 0 is the right lane, 1 the left lane.
pub type Lane = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub initial: VehicleState,
    pub v_des: f64,
    pub start_lane: Lane,
    pub target_lane: Lane,
    pub impairment: DeltaModel,
}

impl AgentSpec {
    pub fn swaps(&self) -> bool {
        self.start_lane != self.target_lane
    }
}

/// Everything a run needs besides the controller: replaying a `World`
/// bypasses the random generator entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub case: ImpairmentCase,
    pub agents: Vec<AgentSpec>,
}

impl World {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn initial_states(&self) -> Vec<VehicleState> {
        self.agents.iter().map(|a| a.initial).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Serde(e.to_string()))
    }
}

/// Generates the world for `cfg.scenario.seed`.
pub fn generate(cfg: &ScenarioConfig) -> Result<World, ScenarioError> {
    generate_with_seed(cfg, cfg.scenario.seed)
}

/// Places `n_agents` vehicles split over the two lanes (the right lane gets
/// the odd one), each lane a platoon behind a random lead position with
/// jittered gaps around the flow-implied headway. Placement is redrawn until
/// every pair clears `min_initial_h`.
pub fn generate_with_seed(cfg: &ScenarioConfig, seed: u64) -> Result<World, ScenarioError> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let road = &s.road;
    let e_ref = cfg.controller.ellipse;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_lane = [s.n_agents.div_ceil(2), s.n_agents / 2];
    let headway = s.mean_headway();

    let mut placed = None;
    for _ in 0..s.max_placement_attempts {
        let mut states = Vec::with_capacity(s.n_agents);
        let mut lanes = Vec::with_capacity(s.n_agents);
        for (lane, &count) in per_lane.iter().enumerate() {
            let mut x = rng.gen_range(s.lead_range[0]..=s.lead_range[1]);
            for k in 0..count {
                if k > 0 {
                    x -= headway * rng.gen_range((1.0 - s.gap_jitter)..=(1.0 + s.gap_jitter));
                }
                let v = rng.gen_range(s.v_range[0]..=s.v_range[1]);
                states.push(VehicleState::new(x, road.lane_centers[lane], 0.0, v));
                lanes.push(lane);
            }
        }
        let mut h = vec![f64::INFINITY; states.len()];
        min_h_per_agent(&states, &e_ref, &mut h);
        if h.iter().all(|&v| v > s.min_initial_h) {
            placed = Some((states, lanes));
            break;
        }
    }
    let (states, lanes) = placed.ok_or(ScenarioError::TooDense(s.max_placement_attempts))?;

    let mut agents: Vec<AgentSpec> = states
        .into_iter()
        .zip(lanes)
        .map(|(initial, start_lane)| {
            let v_des = rng.gen_range(s.v_range[0]..=s.v_range[1]);
            let straight = rng.gen_bool(s.straight_prob);
            AgentSpec {
                initial,
                v_des,
                start_lane,
                target_lane: if straight { start_lane } else { 1 - start_lane },
                impairment: DeltaModel::IDENTITY,
            }
        })
        .collect();

    assign_impairments(cfg, &mut agents, &mut rng);
    Ok(World {
        seed,
        case: cfg.impairment.case,
        agents,
    })
}

fn assign_impairments(cfg: &ScenarioConfig, agents: &mut [AgentSpec], rng: &mut ChaCha8Rng) {
    let m = &cfg.impairment;
    match m.case {
        ImpairmentCase::None => {}
        ImpairmentCase::LossOfPropulsion => {
            let swappers: Vec<usize> = (0..agents.len()).filter(|&i| agents[i].swaps()).collect();
            let pool: Vec<usize> = if swappers.is_empty() {
                (0..agents.len()).collect()
            } else {
                swappers
            };
            let &victim = pool.choose(rng).expect("at least one agent");
            agents[victim].impairment = DeltaModel {
                steer: ChannelOp::Identity,
                accel: ChannelOp::Clip {
                    lo: m.clip[0],
                    hi: m.clip[1],
                },
                onset: Onset::AtPosition { x: m.onset_x },
            };
        }
        ImpairmentCase::OnRails => {
            for a in agents.iter_mut() {
                if rng.gen_bool(m.probability) {
                    a.impairment = DeltaModel {
                        steer: ChannelOp::OnRails,
                        accel: ChannelOp::Gain { k: m.gain },
                        onset: Onset::Immediate,
                    };
                }
            }
        }
        ImpairmentCase::Filtered => {
            for a in agents.iter_mut() {
                if rng.gen_bool(m.probability) {
                    a.impairment = DeltaModel {
                        steer: ChannelOp::FirstOrder { tau: m.steer_tau },
                        accel: ChannelOp::FirstOrder { tau: m.accel_tau },
                        onset: Onset::Immediate,
                    };
                }
            }
        }
    }
    for v in &m.vehicle {
        agents[v.agent].impairment = v.model();
    }
}
