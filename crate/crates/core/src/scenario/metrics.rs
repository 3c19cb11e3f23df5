//! Per-run safety, lane-change, harshness and speed metrics.

use serde::{Deserialize, Serialize};

use crate::barrier::RoadGeometry;
use crate::dynamics::VehicleState;

/// m/s to mi/h.
pub const MPS_TO_MPH: f64 = 2.236_936_292_054_402;
/// Acceleration jumps above this count as harsh, m/s^2.
pub const HARSH_DELTA_AC: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Minimum reference barrier over all pairs and times, m
    /// (infinite when no pair was ever close).
    pub min_h0: f64,
    pub incomplete_lane_changes: usize,
    /// Most negative lane-completion margin over swapping vehicles at the
    /// end of the swap zone, m (positive when all completed).
    pub worst_completion: f64,
    /// Largest lateral excursion past a road boundary, m.
    pub oob: f64,
    /// Largest change of commanded acceleration between control samples, m/s^2.
    pub max_delta_ac: f64,
    pub count_delta_ac_gt2: usize,
    /// Mean over vehicles of desired minus average speed in the swap zone, mi/h.
    pub avg_speed_drop: f64,
    pub qp_fallbacks: usize,
    pub control_steps: usize,
    pub sim_time: f64,
}

/// Wall-clock controller cost, kept apart from [`RunMetrics`] because it is
/// not reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopTimeStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LoopTimeStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: percentile(&sorted, 95.0),
            max_ms: *sorted.last().unwrap(),
        }
    }
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p.clamp(0.0, 100.0) / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// What the tracker needs to know about each vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedAgent {
    pub v_des: f64,
    /// `+1` when moving to the left lane, `-1` to the right, `0` straight.
    pub swap_dir: f64,
}

/// Accumulates metrics from a stream of plant samples and control commands.
#[derive(Debug, Clone)]
pub struct MetricsTracker {
    agents: Vec<TrackedAgent>,
    zone: [f64; 2],
    road: RoadGeometry,
    half_width: f64,
    min_h0: f64,
    oob: f64,
    completion: Vec<Option<f64>>,
    last_y: Vec<f64>,
    prev_ac: Option<Vec<f64>>,
    max_delta_ac: f64,
    harsh: usize,
    speed_sum: Vec<f64>,
    speed_n: Vec<usize>,
    control_steps: usize,
    fallbacks: usize,
    time: f64,
}

impl MetricsTracker {
    pub fn new(agents: Vec<TrackedAgent>, zone: [f64; 2], road: RoadGeometry, half_width: f64) -> Self {
        let n = agents.len();
        Self {
            agents,
            zone,
            road,
            half_width,
            min_h0: f64::INFINITY,
            oob: 0.0,
            completion: vec![None; n],
            last_y: vec![0.0; n],
            prev_ac: None,
            max_delta_ac: 0.0,
            harsh: 0,
            speed_sum: vec![0.0; n],
            speed_n: vec![0; n],
            control_steps: 0,
            fallbacks: 0,
            time: 0.0,
        }
    }

    fn margin(&self, i: usize, y: f64) -> f64 {
        self.agents[i].swap_dir * (y - self.road.divider()) - self.half_width
    }

    /// One plant sample at time `t`: `prev` and `cur` are consecutive states,
    /// `min_h` the smallest reference barrier among all pairs at `cur`.
    pub fn observe_states(&mut self, t: f64, prev: &[VehicleState], cur: &[VehicleState], min_h: f64) {
        self.time = t;
        self.min_h0 = self.min_h0.min(min_h);
        let end = self.zone[1];
        for (i, (p, c)) in prev.iter().zip(cur).enumerate() {
            self.oob = self.oob.max(self.road.rb_r - c.y).max(c.y - self.road.rb_l);
            self.last_y[i] = c.y;
            if self.agents[i].swap_dir != 0.0 && self.completion[i].is_none() && p.x < end && c.x >= end {
                let f = if c.x > p.x { (end - p.x) / (c.x - p.x) } else { 1.0 };
                let y = p.y + f * (c.y - p.y);
                self.completion[i] = Some(self.margin(i, y));
            }
            if c.x >= self.zone[0] && c.x <= end {
                self.speed_sum[i] += c.v;
                self.speed_n[i] += 1;
            }
        }
    }

    /// The implemented acceleration commands of one control period.
    pub fn observe_commands(&mut self, ac: &[f64], fallbacks: usize) {
        if let Some(prev) = &self.prev_ac {
            for (a, b) in ac.iter().zip(prev) {
                let d = (a - b).abs();
                self.max_delta_ac = self.max_delta_ac.max(d);
                if d > HARSH_DELTA_AC {
                    self.harsh += 1;
                }
            }
        }
        self.prev_ac = Some(ac.to_vec());
        self.control_steps += 1;
        self.fallbacks += fallbacks;
    }

    pub fn finish(self) -> RunMetrics {
        let mut incomplete = 0;
        let mut worst = f64::INFINITY;
        for i in 0..self.agents.len() {
            if self.agents[i].swap_dir == 0.0 {
                continue;
            }
            let m = self.completion[i].unwrap_or_else(|| self.margin(i, self.last_y[i]));
            if m < 0.0 {
                incomplete += 1;
            }
            worst = worst.min(m);
        }
        let drops: Vec<f64> = (0..self.agents.len())
            .filter(|&i| self.speed_n[i] > 0)
            .map(|i| self.agents[i].v_des - self.speed_sum[i] / self.speed_n[i] as f64)
            .collect();
        let avg_speed_drop = if drops.is_empty() {
            0.0
        } else {
            drops.iter().sum::<f64>() / drops.len() as f64 * MPS_TO_MPH
        };
        RunMetrics {
            min_h0: self.min_h0,
            incomplete_lane_changes: incomplete,
            worst_completion: if worst.is_finite() { worst } else { 0.0 },
            oob: self.oob.max(0.0),
            max_delta_ac: self.max_delta_ac,
            count_delta_ac_gt2: self.harsh,
            avg_speed_drop,
            qp_fallbacks: self.fallbacks,
            control_steps: self.control_steps,
            sim_time: self.time,
        }
    }
}
