//! Seeded Monte Carlo batches over shared worlds.

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::engine::{run_with, RunOptions};
use super::metrics::{percentile, LoopTimeStats, RunMetrics};
use super::world::generate_with_seed;
use crate::controllers::ControllerKind;
use crate::exec::{self, Execution};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `k`: `mix64(master ^ mix64(k + 0x9e3779b97f4a7c15))`.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    mix64(master ^ mix64(k.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub run: usize,
    pub seed: u64,
    pub controller: ControllerKind,
    pub result: Result<RunMetrics, String>,
    pub timing: LoopTimeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: ControllerKind,
    pub runs: usize,
    pub failed: usize,
    pub min_h0_min: f64,
    pub min_h0_mean: f64,
    pub min_h0_p5: f64,
    pub min_h0_p50: f64,
    /// Runs with `min_h0 < 0`.
    pub violations: usize,
    pub incomplete_total: usize,
    pub runs_with_incomplete: usize,
    pub worst_completion: f64,
    pub oob_max: f64,
    pub max_delta_ac_max: f64,
    pub max_delta_ac_mean: f64,
    pub delta_ac_gt2_mean: f64,
    pub avg_speed_drop_mean: f64,
    pub qp_fallbacks: usize,
}

impl ControllerSummary {
    pub fn violation_fraction(&self) -> f64 {
        let ok = self.runs - self.failed;
        if ok == 0 {
            0.0
        } else {
            self.violations as f64 / ok as f64
        }
    }

    pub fn from_rows(controller: ControllerKind, rows: &[McRow]) -> Self {
        let mine: Vec<&McRow> = rows.iter().filter(|r| r.controller == controller).collect();
        let ok: Vec<&RunMetrics> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let mean = |f: &dyn Fn(&RunMetrics) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
            }
        };
        let max = |f: &dyn Fn(&RunMetrics) -> f64| ok.iter().map(|m| f(m)).fold(f64::NEG_INFINITY, f64::max);
        let mut h: Vec<f64> = ok.iter().map(|m| m.min_h0).collect();
        h.sort_by(f64::total_cmp);
        Self {
            controller,
            runs: mine.len(),
            failed: mine.len() - ok.len(),
            min_h0_min: h.first().copied().unwrap_or(f64::NAN),
            min_h0_mean: mean(&|m| m.min_h0),
            min_h0_p5: percentile(&h, 5.0),
            min_h0_p50: percentile(&h, 50.0),
            violations: ok.iter().filter(|m| m.min_h0 < 0.0).count(),
            incomplete_total: ok.iter().map(|m| m.incomplete_lane_changes).sum(),
            runs_with_incomplete: ok.iter().filter(|m| m.incomplete_lane_changes > 0).count(),
            worst_completion: ok.iter().map(|m| m.worst_completion).fold(f64::INFINITY, f64::min),
            oob_max: max(&|m| m.oob),
            max_delta_ac_max: max(&|m| m.max_delta_ac),
            max_delta_ac_mean: mean(&|m| m.max_delta_ac),
            delta_ac_gt2_mean: mean(&|m| m.count_delta_ac_gt2 as f64),
            avg_speed_drop_mean: mean(&|m| m.avg_speed_drop),
            qp_fallbacks: ok.iter().map(|m| m.qp_fallbacks).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub master_seed: u64,
    pub rows: Vec<McRow>,
    pub summary: Vec<ControllerSummary>,
}

impl McResult {
    pub fn summary_for(&self, kind: ControllerKind) -> Option<&ControllerSummary> {
        self.summary.iter().find(|s| s.controller == kind)
    }

    /// Successful metrics of `kind`, in run order.
    pub fn metrics(&self, kind: ControllerKind) -> Vec<RunMetrics> {
        self.rows
            .iter()
            .filter(|r| r.controller == kind)
            .filter_map(|r| r.result.clone().ok())
            .collect()
    }
}

/// Runs `runs` worlds (seeds derived from `cfg.scenario.seed`), each under
/// every controller in `controllers`. Runs are distributed by `exec`; a
/// failing run is recorded and the batch continues.
pub fn monte_carlo(cfg: &ScenarioConfig, runs: usize, controllers: &[ControllerKind], exec: Execution) -> McResult {
    let master = cfg.scenario.seed;
    let per_run: Vec<Vec<McRow>> = exec::map_indexed(exec, runs, |k| {
        let seed = derive_seed(master, k as u64);
        let opts = RunOptions {
            run_id: k as u64,
            record: false,
        };
        match generate_with_seed(cfg, seed) {
            Ok(world) => controllers
                .iter()
                .map(|&kind| {
                    let out = run_with(&world, cfg, kind, &opts);
                    McRow {
                        run: k,
                        seed,
                        controller: kind,
                        timing: out.as_ref().map(|o| o.timing).unwrap_or_default(),
                        result: out.map(|o| o.metrics).map_err(|e| e.to_string()),
                    }
                })
                .collect(),
            Err(e) => controllers
                .iter()
                .map(|&kind| McRow {
                    run: k,
                    seed,
                    controller: kind,
                    timing: LoopTimeStats::default(),
                    result: Err(e.to_string()),
                })
                .collect(),
        }
    });
    let rows: Vec<McRow> = per_run.into_iter().flatten().collect();
    let summary = controllers
        .iter()
        .map(|&k| ControllerSummary::from_rows(k, &rows))
        .collect();
    McResult {
        master_seed: master,
        rows,
        summary,
    }
}
