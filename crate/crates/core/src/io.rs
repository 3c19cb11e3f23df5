//! CSV and JSONL writers for run metrics, Monte Carlo summaries, fast-loop
//! sweeps and trajectories.
//!
//! Every CSV starts with a `schema_version` column. Wall-clock loop timing
//! goes to its own file so that everything else is byte-reproducible.

use std::io::Write;

use serde::Serialize;

use crate::controllers::ControllerKind;
use crate::error::ScenarioError;
use crate::fastloop::SweepPoint;
use crate::scenario::config::ImpairmentCase;
use crate::scenario::engine::TrajectoryLog;
use crate::scenario::metrics::RunMetrics;
use crate::scenario::monte_carlo::{ControllerSummary, McResult, McRow};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub schema_version: u32,
    pub run: usize,
    pub seed: u64,
    pub controller: ControllerKind,
    pub case: ImpairmentCase,
    /// `ok`, or the error message of a failed run.
    pub status: String,
    pub min_h0: Option<f64>,
    pub incomplete_ls: Option<usize>,
    pub worst_completion: Option<f64>,
    pub oob: Option<f64>,
    pub max_delta_ac: Option<f64>,
    pub delta_ac_gt2: Option<usize>,
    pub avg_speed_drop_mph: Option<f64>,
    pub qp_fallbacks: Option<usize>,
    pub control_steps: Option<usize>,
    pub sim_time: Option<f64>,
}

impl MetricsRow {
    pub fn new(
        run: usize,
        seed: u64,
        controller: ControllerKind,
        case: ImpairmentCase,
        result: &Result<RunMetrics, String>,
    ) -> Self {
        let m = result.as_ref().ok();
        Self {
            schema_version: SCHEMA_VERSION,
            run,
            seed,
            controller,
            case,
            status: match result {
                Ok(_) => "ok".into(),
                Err(e) => e.clone(),
            },
            min_h0: m.map(|m| m.min_h0),
            incomplete_ls: m.map(|m| m.incomplete_lane_changes),
            worst_completion: m.map(|m| m.worst_completion),
            oob: m.map(|m| m.oob),
            max_delta_ac: m.map(|m| m.max_delta_ac),
            delta_ac_gt2: m.map(|m| m.count_delta_ac_gt2),
            avg_speed_drop_mph: m.map(|m| m.avg_speed_drop),
            qp_fallbacks: m.map(|m| m.qp_fallbacks),
            control_steps: m.map(|m| m.control_steps),
            sim_time: m.map(|m| m.sim_time),
        }
    }

    fn from_mc(row: &McRow, case: ImpairmentCase) -> Self {
        Self::new(row.run, row.seed, row.controller, case, &row.result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub controller: ControllerKind,
    pub case: ImpairmentCase,
    pub runs: usize,
    pub failed: usize,
    pub min_h0: f64,
    pub min_h0_mean: f64,
    pub min_h0_p5: f64,
    pub violations: usize,
    pub incomplete_ls: usize,
    pub runs_with_incomplete: usize,
    pub oob: f64,
    pub max_delta_ac: f64,
    pub max_delta_ac_mean: f64,
    pub delta_ac_gt2_mean: f64,
    pub avg_speed_drop_mph: f64,
    pub qp_fallbacks: usize,
}

impl SummaryRow {
    pub fn new(s: &ControllerSummary, case: ImpairmentCase) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            controller: s.controller,
            case,
            runs: s.runs,
            failed: s.failed,
            min_h0: s.min_h0_min,
            min_h0_mean: s.min_h0_mean,
            min_h0_p5: s.min_h0_p5,
            violations: s.violations,
            incomplete_ls: s.incomplete_total,
            runs_with_incomplete: s.runs_with_incomplete,
            oob: s.oob_max,
            max_delta_ac: s.max_delta_ac_max,
            max_delta_ac_mean: s.max_delta_ac_mean,
            delta_ac_gt2_mean: s.delta_ac_gt2_mean,
            avg_speed_drop_mph: s.avg_speed_drop_mean,
            qp_fallbacks: s.qp_fallbacks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TimingRow {
    schema_version: u32,
    run: usize,
    controller: ControllerKind,
    mean_ms: f64,
    p95_ms: f64,
    max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub mode: &'static str,
    pub k: f64,
    pub eps: f64,
    pub delay_over_eps: f64,
    pub verdict: &'static str,
    pub decay_rate: f64,
    pub peak: f64,
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            mode: p.mode.name(),
            k: p.k,
            eps: p.eps,
            delay_over_eps: p.report.delay_over_eps,
            verdict: p.report.verdict.name(),
            decay_rate: p.report.decay_rate,
            peak: p.report.peak,
        }
    }
}

/// Stability boundary estimate for one `(mode, k, eps)`; `boundary` is empty
/// when the bracket holds no transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub schema_version: u32,
    pub mode: &'static str,
    pub k: f64,
    pub eps: f64,
    pub boundary_delay_over_eps: Option<f64>,
    pub note: String,
}

fn csv_err(e: csv::Error) -> ScenarioError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ScenarioError::Io(io),
        other => ScenarioError::Serde(format!("{other:?}")),
    }
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mc_runs<W: Write>(out: W, mc: &McResult, case: ImpairmentCase) -> Result<(), ScenarioError> {
    let rows: Vec<MetricsRow> = mc.rows.iter().map(|r| MetricsRow::from_mc(r, case)).collect();
    write_csv(out, &rows)
}

pub fn write_mc_summary<W: Write>(out: W, mc: &McResult, case: ImpairmentCase) -> Result<(), ScenarioError> {
    let rows: Vec<SummaryRow> = mc.summary.iter().map(|s| SummaryRow::new(s, case)).collect();
    write_csv(out, &rows)
}

pub fn write_mc_timing<W: Write>(out: W, mc: &McResult) -> Result<(), ScenarioError> {
    let rows: Vec<TimingRow> = mc
        .rows
        .iter()
        .map(|r| TimingRow {
            schema_version: SCHEMA_VERSION,
            run: r.run,
            controller: r.controller,
            mean_ms: r.timing.mean_ms,
            p95_ms: r.timing.p95_ms,
            max_ms: r.timing.max_ms,
        })
        .collect();
    write_csv(out, &rows)
}

/// One JSON object per control step.
pub fn write_trajectory_jsonl<W: Write>(mut out: W, log: &TrajectoryLog) -> Result<(), ScenarioError> {
    for r in &log.records {
        serde_json::to_writer(&mut out, r).map_err(|e| ScenarioError::Serde(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn fmt_num(x: f64, prec: usize) -> String {
    if x.is_finite() {
        format!("{x:.prec$}")
    } else {
        format!("{x}")
    }
}

/// Human-readable summary table, one row per controller.
pub fn summary_table(mc: &McResult, case: ImpairmentCase) -> String {
    let mut s = format!(
        "case {case}, {} runs per controller, master seed {}\n",
        mc.rows.len() / mc.summary.len().max(1),
        mc.master_seed
    );
    s.push_str(&format!(
        "{:<10} {:>9} {:>9} {:>11} {:>8} {:>11} {:>10} {:>10} {:>9}\n",
        "controller", "min h0", "viol %", "incompl LS", "OOB", "max dAc", "dAc>2", "mean dAc", "drop mph"
    ));
    for c in &mc.summary {
        s.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>11} {:>8} {:>11} {:>10} {:>10} {:>9}\n",
            c.controller.name(),
            fmt_num(c.min_h0_min, 3),
            fmt_num(100.0 * c.violation_fraction(), 1),
            c.incomplete_total,
            fmt_num(c.oob_max, 2),
            fmt_num(c.max_delta_ac_max, 2),
            fmt_num(c.delta_ac_gt2_mean, 1),
            fmt_num(c.max_delta_ac_mean, 2),
            fmt_num(c.avg_speed_drop_mean, 2),
        ));
    }
    let failed: Vec<&McRow> = mc.rows.iter().filter(|r| r.result.is_err()).collect();
    if failed.is_empty() {
        s.push_str("all runs completed\n");
    } else {
        s.push_str(&format!("{} run(s) failed:\n", failed.len()));
        for r in failed {
            s.push_str(&format!(
                "  run {} {}: {}\n",
                r.run,
                r.controller,
                r.result.as_ref().unwrap_err()
            ));
        }
    }
    s
}
