//! Intent-based gap making.
//!
//! A min-norm safety filter resolves a cross-lane conflict almost entirely
//! by holding the steering, since the steering coefficients of the barrier
//! rows are two orders of magnitude larger than the acceleration ones. Two
//! vehicles swapping into each other's lanes side by side then stall. The
//! baseline therefore adjusts speed targets from everyone's intent. A
//! vehicle that still has to change lanes conflicts with every vehicle in,
//! or heading for, its target lane that is less than `gap` away
//! longitudinally; of each conflicting pair the rear one slows and the
//! front one speeds up.

use serde::{Deserialize, Serialize};

use crate::barrier::RoadGeometry;
use crate::dynamics::VehicleState;
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YieldParams {
    pub enabled: bool,
    /// Longitudinal spacing sought between conflicting vehicles, m.
    pub gap: f64,
    /// Speed-target reduction of the rear vehicle per metre of missing gap, 1/s.
    pub rear_gain: f64,
    /// Speed-target increase of the front vehicle per metre of missing gap, 1/s.
    pub front_gain: f64,
    /// Conflicts are resolved from this far before the swap zone, m.
    pub lead_in: f64,
    /// A vehicle within this lateral distance of its target lane center no
    /// longer needs a gap, m.
    pub settled: f64,
}

impl Default for YieldParams {
    fn default() -> Self {
        Self {
            enabled: true,
            gap: 14.0,
            rear_gain: 0.4,
            front_gain: 0.2,
            lead_in: 30.0,
            settled: 0.5,
        }
    }
}

impl YieldParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gap >= 0.0) {
            return Err(ConfigError::invalid("controller.yielding.gap", "must be >= 0"));
        }
        if !(self.rear_gain >= 0.0 && self.front_gain >= 0.0) {
            return Err(ConfigError::invalid("controller.yielding", "gains must be >= 0"));
        }
        if !(self.lead_in >= 0.0 && self.settled >= 0.0) {
            return Err(ConfigError::invalid("controller.yielding", "distances must be >= 0"));
        }
        Ok(())
    }
}

/// Lane intent of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneIntent {
    pub start_lane: usize,
    pub target_lane: usize,
}

/// Speed-target offsets, m/s, one per vehicle.
pub fn speed_offsets(
    states: &[VehicleState],
    intents: &[LaneIntent],
    road: &RoadGeometry,
    zone: [f64; 2],
    p: &YieldParams,
) -> Vec<f64> {
    let n = states.len();
    let mut offset = vec![0.0; n];
    if !p.enabled {
        return offset;
    }
    let mut slow = vec![0.0f64; n];
    let mut fast = vec![0.0f64; n];
    let divider = road.divider();
    let lane_of = |y: f64| usize::from(y > divider);
    let needs_gap = |i: usize| {
        let (s, it) = (&states[i], &intents[i]);
        it.start_lane != it.target_lane
            && s.x >= zone[0] - p.lead_in
            && s.x <= zone[1]
            && (s.y - road.lane_centers[it.target_lane]).abs() > p.settled
    };
    for i in 0..n {
        if !needs_gap(i) {
            continue;
        }
        let target = intents[i].target_lane;
        for j in 0..n {
            if j == i {
                continue;
            }
            // j occupies or is heading for the lane i is moving into
            let in_target = lane_of(states[j].y) == target
                || (intents[j].target_lane == target && intents[j].start_lane != intents[i].start_lane);
            if !in_target {
                continue;
            }
            let dx = states[j].x - states[i].x;
            let missing = p.gap - dx.abs();
            if missing <= 0.0 {
                continue;
            }
            // ties go to the lower index
            let (rear, front) = if dx > 0.0 || (dx == 0.0 && i > j) {
                (i, j)
            } else {
                (j, i)
            };
            slow[rear] = f64::max(slow[rear], p.rear_gain * missing);
            fast[front] = f64::max(fast[front], p.front_gain * missing);
        }
    }
    for k in 0..n {
        // yielding wins over speeding up
        offset[k] = if slow[k] > 0.0 { -slow[k] } else { fast[k] };
    }
    offset
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intents() -> Vec<LaneIntent> {
        vec![
            LaneIntent {
                start_lane: 0,
                target_lane: 1,
            },
            LaneIntent {
                start_lane: 1,
                target_lane: 0,
            },
        ]
    }

    #[test]
    fn rear_slows_front_speeds_up() {
        let s = [
            VehicleState::new(0.0, -1.75, 0.0, 22.0),
            VehicleState::new(4.0, 1.75, 0.0, 22.0),
        ];
        let o = speed_offsets(
            &s,
            &intents(),
            &RoadGeometry::default(),
            [0.0, 120.0],
            &YieldParams::default(),
        );
        assert!((o[0] + 0.4 * 10.0).abs() < 1e-12);
        assert!((o[1] - 0.2 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_or_straight_is_untouched() {
        let road = RoadGeometry::default();
        let p = YieldParams::default();
        let s = [
            VehicleState::new(0.0, -1.75, 0.0, 22.0),
            VehicleState::new(30.0, 1.75, 0.0, 22.0),
        ];
        assert_eq!(speed_offsets(&s, &intents(), &road, [0.0, 120.0], &p), vec![0.0, 0.0]);
        let straight = vec![
            LaneIntent {
                start_lane: 0,
                target_lane: 0,
            },
            LaneIntent {
                start_lane: 1,
                target_lane: 1,
            },
        ];
        let s = [
            VehicleState::new(0.0, -1.75, 0.0, 22.0),
            VehicleState::new(2.0, 1.75, 0.0, 22.0),
        ];
        assert_eq!(speed_offsets(&s, &straight, &road, [0.0, 120.0], &p), vec![0.0, 0.0]);
    }

    #[test]
    fn straight_goer_in_target_lane_makes_room() {
        let it = vec![
            LaneIntent {
                start_lane: 0,
                target_lane: 1,
            },
            LaneIntent {
                start_lane: 1,
                target_lane: 1,
            },
        ];
        let s = [
            VehicleState::new(6.0, -1.75, 0.0, 22.0),
            VehicleState::new(0.0, 1.75, 0.0, 22.0),
        ];
        let o = speed_offsets(&s, &it, &RoadGeometry::default(), [0.0, 120.0], &YieldParams::default());
        assert!((o[0] - 0.2 * 8.0).abs() < 1e-12);
        assert!((o[1] + 0.4 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn disabled_is_zero() {
        let s = [
            VehicleState::new(0.0, -1.75, 0.0, 22.0),
            VehicleState::new(1.0, 1.75, 0.0, 22.0),
        ];
        let p = YieldParams {
            enabled: false,
            ..Default::default()
        };
        assert_eq!(
            speed_offsets(&s, &intents(), &RoadGeometry::default(), [0.0, 120.0], &p),
            vec![0.0, 0.0]
        );
    }
}
