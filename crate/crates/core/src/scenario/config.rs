//! Scenario configuration, read from TOML.
//!
//! Every section is optional and every key has a default; unknown keys are
//! rejected with the line and column of the offending entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::{CbfGains, EllipseParams, RoadGeometry, RowPruning};
use crate::controllers::{BaselineParams, ControllerKind};
use crate::dynamics::{ControlInput, VehicleParams, ACCEL_MAX, ACCEL_MIN, DEFAULT_WHEELBASE, STEER_LIMIT};
use crate::error::ConfigError;
use crate::impairment::{ChannelOp, DeltaModel, Onset};
use crate::qp::QpSettings;

use super::coordination::YieldParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub controller: ControllerSection,
    pub impairment: ImpairmentSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_agents: usize,
    /// Range for initial and desired speeds, m/s.
    pub v_range: [f64; 2],
    pub straight_prob: f64,
    pub road: RoadGeometry,
    /// Lane changes are commanded at `swap_zone[0]` and must be complete
    /// by `swap_zone[1]`, m.
    pub swap_zone: [f64; 2],
    /// Traffic flow used to set the mean initial headway, veh/h per lane.
    pub flow_per_lane: f64,
    /// Range for the x position of each lane's lead vehicle, m.
    pub lead_range: [f64; 2],
    /// Gaps are the mean headway times `U[1 - jitter, 1 + jitter]`.
    pub gap_jitter: f64,
    /// Required reference barrier value between any two vehicles at t = 0, m.
    pub min_initial_h: f64,
    pub max_placement_attempts: usize,
    pub seed: u64,
    pub sim_dt: f64,
    pub ctrl_dt: f64,
    pub horizon: f64,
    /// A run ends once every vehicle is this far past the swap zone, m.
    pub exit_margin: f64,
    /// Used by the lane-completion metric, m.
    pub vehicle_half_width: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            n_agents: 16,
            v_range: [20.0, 24.0],
            straight_prob: 0.15,
            road: RoadGeometry::default(),
            swap_zone: [0.0, 120.0],
            flow_per_lane: 3400.0,
            lead_range: [-45.0, -25.0],
            gap_jitter: 0.4,
            min_initial_h: 0.5,
            max_placement_attempts: 1000,
            seed: 0,
            sim_dt: 0.01,
            ctrl_dt: 0.1,
            horizon: 30.0,
            exit_margin: 30.0,
            vehicle_half_width: 0.9,
        }
    }
}

impl ScenarioSection {
    /// Mean within-lane headway implied by the flow at the mean speed, m.
    pub fn mean_headway(&self) -> f64 {
        0.5 * (self.v_range[0] + self.v_range[1]) * 3600.0 / self.flow_per_lane
    }

    pub fn steps_per_ctrl(&self) -> usize {
        (self.ctrl_dt / self.sim_dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    /// Fast filter time constant, s.
    pub eps: f64,
    pub wheelbase: f64,
    pub steer_limit: f64,
    pub accel_range: [f64; 2],
    /// Run split-MPF sub-controllers on the thread pool.
    pub parallel_subcontrollers: bool,
    pub baseline: BaselineParams,
    pub ellipse: EllipseParams,
    pub gains: CbfGains,
    pub qp: QpSettings,
    pub pruning: RowPruning,
    pub yielding: YieldParams,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::FullMpf,
            eps: 0.2,
            wheelbase: DEFAULT_WHEELBASE,
            steer_limit: STEER_LIMIT,
            accel_range: [ACCEL_MIN, ACCEL_MAX],
            parallel_subcontrollers: false,
            baseline: BaselineParams::default(),
            ellipse: EllipseParams::default(),
            gains: CbfGains::default(),
            qp: QpSettings::default(),
            pruning: RowPruning::default(),
            yielding: YieldParams::default(),
        }
    }
}

impl ControllerSection {
    pub fn vehicle_params(&self) -> VehicleParams {
        VehicleParams {
            wheelbase: self.wheelbase,
            u_min: ControlInput::new(-self.steer_limit, self.accel_range[0]),
            u_max: ControlInput::new(self.steer_limit, self.accel_range[1]),
        }
    }
}

/// Impairment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ImpairmentCase {
    #[default]
    #[serde(rename = "none")]
    None,
    /// One swapping vehicle loses propulsion before the swap zone.
    #[serde(rename = "1")]
    LossOfPropulsion,
    /// Randomly chosen vehicles steer on rails with attenuated acceleration.
    #[serde(rename = "2")]
    OnRails,
    /// Randomly chosen vehicles have first-order lagged actuators.
    #[serde(rename = "3")]
    Filtered,
}

impl ImpairmentCase {
    pub fn name(self) -> &'static str {
        match self {
            ImpairmentCase::None => "none",
            ImpairmentCase::LossOfPropulsion => "1",
            ImpairmentCase::OnRails => "2",
            ImpairmentCase::Filtered => "3",
        }
    }
}

impl std::str::FromStr for ImpairmentCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "0" => Ok(ImpairmentCase::None),
            "1" => Ok(ImpairmentCase::LossOfPropulsion),
            "2" => Ok(ImpairmentCase::OnRails),
            "3" => Ok(ImpairmentCase::Filtered),
            other => Err(format!("unknown impairment case '{other}' (expected none, 1, 2 or 3)")),
        }
    }
}

impl std::fmt::Display for ImpairmentCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Explicit impairment for one vehicle, applied after the preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleImpairment {
    pub agent: usize,
    #[serde(default)]
    pub steer: ChannelOp,
    #[serde(default)]
    pub accel: ChannelOp,
    #[serde(default)]
    pub onset: Onset,
}

impl VehicleImpairment {
    pub fn model(&self) -> DeltaModel {
        DeltaModel {
            steer: self.steer,
            accel: self.accel,
            onset: self.onset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentSection {
    pub case: ImpairmentCase,
    /// Per-vehicle probability for the random presets.
    pub probability: f64,
    /// x position at which loss of propulsion sets in, m.
    pub onset_x: f64,
    /// Acceleration window after loss of propulsion, m/s^2.
    pub clip: [f64; 2],
    /// Acceleration attenuation of on-rails vehicles.
    pub gain: f64,
    pub steer_tau: f64,
    pub accel_tau: f64,
    pub vehicle: Vec<VehicleImpairment>,
}

impl Default for ImpairmentSection {
    fn default() -> Self {
        Self {
            case: ImpairmentCase::None,
            probability: 0.5,
            onset_x: -20.0,
            clip: [-8.0, -0.2],
            gain: 0.7,
            steer_tau: 0.2,
            accel_tau: 0.4,
            vehicle: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub trajectory: bool,
    pub world: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            trajectory: true,
            world: true,
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, reason))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        check(s.n_agents >= 1, "scenario.n_agents", "must be >= 1")?;
        check(
            s.v_range[0] >= 0.0 && s.v_range[0] <= s.v_range[1],
            "scenario.v_range",
            "must satisfy 0 <= lo <= hi",
        )?;
        check(
            (0.0..=1.0).contains(&s.straight_prob),
            "scenario.straight_prob",
            "must be in [0, 1]",
        )?;
        s.road.validate()?;
        check(
            s.swap_zone[0] < s.swap_zone[1],
            "scenario.swap_zone",
            "start must be < end",
        )?;
        check(s.flow_per_lane > 0.0, "scenario.flow_per_lane", "must be > 0")?;
        check(
            s.lead_range[0] <= s.lead_range[1],
            "scenario.lead_range",
            "lo must be <= hi",
        )?;
        check(
            (0.0..1.0).contains(&s.gap_jitter),
            "scenario.gap_jitter",
            "must be in [0, 1)",
        )?;
        check(
            s.max_placement_attempts >= 1,
            "scenario.max_placement_attempts",
            "must be >= 1",
        )?;
        check(s.sim_dt > 0.0, "scenario.sim_dt", "must be > 0")?;
        check(s.ctrl_dt >= s.sim_dt, "scenario.ctrl_dt", "must be >= sim_dt")?;
        check(
            ((s.ctrl_dt / s.sim_dt) - (s.ctrl_dt / s.sim_dt).round()).abs() < 1e-9,
            "scenario.ctrl_dt",
            "must be an integer multiple of sim_dt",
        )?;
        check(s.horizon > 0.0, "scenario.horizon", "must be > 0")?;
        check(
            s.vehicle_half_width >= 0.0,
            "scenario.vehicle_half_width",
            "must be >= 0",
        )?;

        let c = &self.controller;
        check(c.eps > 0.0, "controller.eps", "must be > 0")?;
        check(c.steer_limit > 0.0, "controller.steer_limit", "must be > 0")?;
        check(
            c.accel_range[0] < 0.0 && c.accel_range[1] > 0.0,
            "controller.accel_range",
            "must straddle 0",
        )?;
        c.vehicle_params().validate()?;
        check(
            c.baseline.min_lookahead >= 1.0,
            "controller.baseline.min_lookahead",
            "must be >= 1 m",
        )?;
        check(
            c.baseline.lookahead_gain > 0.0,
            "controller.baseline.lookahead_gain",
            "must be > 0",
        )?;
        check(
            c.baseline.kp_speed >= 0.0,
            "controller.baseline.kp_speed",
            "must be >= 0",
        )?;
        c.ellipse.validate()?;
        c.gains.validate()?;
        c.yielding.validate()?;
        check(c.qp.tol > 0.0, "controller.qp.tol", "must be > 0")?;
        check(c.qp.max_iter >= 1, "controller.qp.max_iter", "must be >= 1")?;
        check(c.qp.slack_weight > 0.0, "controller.qp.slack_weight", "must be > 0")?;
        check(c.qp.steer_weight > 0.0, "controller.qp.steer_weight", "must be > 0")?;

        let m = &self.impairment;
        check(
            (0.0..=1.0).contains(&m.probability),
            "impairment.probability",
            "must be in [0, 1]",
        )?;
        check(m.clip[0] <= m.clip[1], "impairment.clip", "lo must be <= hi")?;
        check(m.steer_tau > 0.0, "impairment.steer_tau", "must be > 0")?;
        check(m.accel_tau > 0.0, "impairment.accel_tau", "must be > 0")?;
        for v in &m.vehicle {
            check(v.agent < s.n_agents, "impairment.vehicle.agent", "out of range")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.scenario.steps_per_ctrl(), 10);
        assert!((c.scenario.mean_headway() - 23.294).abs() < 1e-3);
    }

    #[test]
    fn round_trip() {
        let mut c = ScenarioConfig::default();
        c.impairment.case = ImpairmentCase::Filtered;
        c.controller.kind = ControllerKind::SplitMpf;
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
[scenario]
n_agents = 4
seed = 7

[controller]
kind = "split-mpf"

[controller.ellipse]
margin = 0.2

[impairment]
case = "2"

[[impairment.vehicle]]
agent = 1
steer = { op = "pure_delay", delay = 0.05 }
accel = { op = "gain", k = 0.5 }
"#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.scenario.n_agents, 4);
        assert_eq!(c.controller.kind, ControllerKind::SplitMpf);
        assert_eq!(c.controller.ellipse.margin, 0.2);
        assert_eq!(c.controller.ellipse.r, 2.0);
        assert_eq!(c.impairment.case, ImpairmentCase::OnRails);
        assert_eq!(c.impairment.vehicle[0].model().accel, ChannelOp::Gain { k: 0.5 });
    }

    #[test]
    fn unknown_key_reports_location() {
        let err = ScenarioConfig::from_toml_str("[scenario]\nn_agents = 4\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ScenarioConfig::from_toml_str("[scenario]\nn_agents = 0\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[scenario]\nctrl_dt = 0.015\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[controller]\neps = -1.0\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[impairment]\ncase = \"4\"\n").is_err());
    }
}
