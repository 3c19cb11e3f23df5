//! Scalar delay models of the fast proprioceptive loop.
//!
//! With an equal delay `tau` in every actuator and the slow barrier gradient
//! frozen, the projected filter state `eta` obeys
//!
//! ```text
//! full-MPF:   eps eta' = -k eta(t - tau) + c
//! split-MPF:  eps eta' = -k (eta + eta(t - tau)) + c
//! ```
//!
//! The full-MPF loop loses stability at `tau / eps = pi / 2` (for `k = 1`);
//! the split-MPF loop is stable for every delay when `0 < k <= 1/2`.
//! This module integrates both and classifies the trajectories.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::FastLoopError;
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopMode {
    FullMpf,
    SplitMpf,
}

impl LoopMode {
    pub fn name(self) -> &'static str {
        match self {
            LoopMode::FullMpf => "full-mpf",
            LoopMode::SplitMpf => "split-mpf",
        }
    }
}

impl std::str::FromStr for LoopMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-mpf" => Ok(LoopMode::FullMpf),
            "split-mpf" => Ok(LoopMode::SplitMpf),
            other => Err(format!(
                "unknown fast-loop mode '{other}' (expected full-mpf or split-mpf)"
            )),
        }
    }
}

/// Split-MPF loop gain for a two-input constraint row `b = (b1, b2)`:
/// `2 b1^2 b2^2 / |b|^4`, which lies in `[0, 1/2]`.
pub fn split_gain(b1: f64, b2: f64) -> f64 {
    let bb = b1 * b1 + b2 * b2;
    2.0 * b1 * b1 * b2 * b2 / (bb * bb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarDde {
    pub eps: f64,
    pub delay: f64,
    pub gain: f64,
    pub forcing: f64,
    pub mode: LoopMode,
}

impl ScalarDde {
    pub fn new(mode: LoopMode, gain: f64, eps: f64, delay: f64) -> Self {
        Self {
            eps,
            delay,
            gain,
            forcing: 0.0,
            mode,
        }
    }

    fn validate(&self) -> Result<(), FastLoopError> {
        if !(self.eps > 0.0) {
            return Err(FastLoopError::Invalid("eps must be > 0".into()));
        }
        if !(self.delay >= 0.0) {
            return Err(FastLoopError::Invalid("delay must be >= 0".into()));
        }
        if !(self.gain > 0.0) {
            return Err(FastLoopError::Invalid("gain must be > 0".into()));
        }
        Ok(())
    }

    fn rhs(&self, eta: f64, delayed: f64) -> f64 {
        let drive = match self.mode {
            LoopMode::FullMpf => -self.gain * delayed,
            LoopMode::SplitMpf => -self.gain * (eta + delayed),
        };
        (drive + self.forcing) / self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    OscillatoryDecay,
    Diverged,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::OscillatoryDecay => "oscillatory_decay",
            Verdict::Diverged => "diverged",
        }
    }

    pub fn is_stable(self) -> bool {
        self != Verdict::Diverged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delay_over_eps: f64,
    pub verdict: Verdict,
    /// Exponential decay rate of the envelope, 1/s (negative when growing).
    pub decay_rate: f64,
    /// Largest `|eta|` seen.
    pub peak: f64,
    /// `eta` at the end of the horizon.
    pub final_value: f64,
}

/// Trajectory norm beyond which a run counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
/// Opposite-sign excursion (relative to `eta(0)`) that counts as oscillation.
pub const OVERSHOOT_THRESHOLD: f64 = 1e-3;

/// Samples of `eta` on a uniform grid starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub eta: Vec<f64>,
}

/// Past samples needed for the delayed lookup.
struct History {
    dt: f64,
    /// index of `buf[0]`
    first: usize,
    buf: VecDeque<f64>,
    cap: usize,
}

impl History {
    fn new(delay: f64, dt: f64) -> Self {
        let cap = (delay / dt).ceil() as usize + 2;
        Self {
            dt,
            first: 0,
            buf: VecDeque::with_capacity(cap + 1),
            cap,
        }
    }

    fn push(&mut self, v: f64) {
        self.buf.push_back(v);
        if self.buf.len() > self.cap {
            self.buf.pop_front();
            self.first += 1;
        }
    }

    /// Linear interpolation at time `t` inside the stored window; zero
    /// before `t = 0`.
    fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let pos = t / self.dt;
        let m = pos.floor() as usize;
        let frac = pos - m as f64;
        let get = |idx: usize| -> f64 {
            let k = idx.saturating_sub(self.first).min(self.buf.len() - 1);
            self.buf[k]
        };
        if frac <= 0.0 {
            get(m)
        } else {
            (1.0 - frac) * get(m) + frac * get(m + 1)
        }
    }
}

/// Fixed-step RK4 with zero initial history and `eta(0) = 1`.
pub fn integrate(m: &ScalarDde, horizon: f64, dt: f64) -> Trajectory {
    let steps = (horizon / dt).round() as usize;
    let mut hist = History::new(m.delay, dt);
    let mut eta = Vec::with_capacity(steps + 1);
    let mut cur = 1.0;
    eta.push(cur);
    hist.push(cur);
    for n in 0..steps {
        let t = n as f64 * dt;
        // delayed value at stage time t + off, where the stage state is `y`
        let delayed = |off: f64, y: f64| -> f64 {
            let tq = t + off - m.delay;
            if tq <= t {
                hist.at(tq)
            } else {
                // delay shorter than the stage offset: interpolate toward the stage
                let f = (tq - t) / off;
                (1.0 - f) * cur + f * y
            }
        };
        let k1 = m.rhs(cur, delayed(0.0, cur));
        let y2 = cur + 0.5 * dt * k1;
        let k2 = m.rhs(y2, delayed(0.5 * dt, y2));
        let y3 = cur + 0.5 * dt * k2;
        let k3 = m.rhs(y3, delayed(0.5 * dt, y3));
        let y4 = cur + dt * k3;
        let k4 = m.rhs(y4, delayed(dt, y4));
        cur += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        eta.push(cur);
        hist.push(cur);
        if !cur.is_finite() || cur.abs() > DIVERGENCE_THRESHOLD {
            break;
        }
    }
    Trajectory { dt, eta }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Classifies a trajectory and fits its envelope decay rate.
pub fn analyze(traj: &Trajectory, eps: f64, delay: f64) -> StabilityReport {
    let eta = &traj.eta;
    let dt = traj.dt;
    let peak = eta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let final_value = *eta.last().unwrap_or(&0.0);
    let delay_over_eps = delay / eps;
    let horizon = (eta.len() - 1) as f64 * dt;

    if eta.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
        let end = eta.len() - 1;
        let rate = -(peak.max(1.0).ln()) / (end.max(1) as f64 * dt);
        return StabilityReport {
            delay_over_eps,
            verdict: Verdict::Diverged,
            decay_rate: rate,
            peak,
            final_value,
        };
    }

    let start_sign = eta[0].signum();
    let overshoot = eta.iter().map(|v| -v * start_sign).fold(f64::NEG_INFINITY, f64::max);
    let oscillatory = overshoot > OVERSHOOT_THRESHOLD * eta[0].abs();

    let slope = if oscillatory {
        // peak |eta| of every half cycle between sign changes
        let mut peaks: Vec<(f64, f64)> = Vec::new();
        let mut best = (0.0, 0.0);
        let mut sign = start_sign;
        for (k, &v) in eta.iter().enumerate() {
            if v != 0.0 && v.signum() != sign {
                if best.1 > 0.0 {
                    peaks.push(best);
                }
                sign = v.signum();
                best = (0.0, 0.0);
            }
            if v.abs() > best.1 {
                best = (k as f64 * dt, v.abs());
            }
        }
        // last, possibly incomplete half cycle only counts if it already
        // exceeds the previous peak (growth)
        if let Some(&(_, last)) = peaks.last() {
            if best.1 > last {
                peaks.push(best);
            }
        }
        let late: Vec<(f64, f64)> = peaks
            .iter()
            .filter(|(t, p)| *t >= 0.5 * horizon && *p > 1e-280)
            .map(|&(t, p)| (t, p.ln()))
            .collect();
        let use_pts = if late.len() >= 2 {
            late
        } else {
            peaks
                .iter()
                .filter(|(_, p)| *p > 1e-280)
                .map(|&(t, p)| (t, p.ln()))
                .collect()
        };
        if use_pts.len() >= 2 {
            least_squares_slope(&use_pts)
        } else {
            // a single excursion that died out
            -1.0 / eps
        }
    } else {
        let pts: Vec<(f64, f64)> = eta
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64 * dt, v.abs()))
            .filter(|(t, v)| *t >= 0.5 * horizon && *v > 1e-280)
            .map(|(t, v)| (t, v.ln()))
            .collect();
        if pts.len() >= 2 {
            least_squares_slope(&pts)
        } else {
            -1.0 / eps
        }
    };
    let decay_rate = -slope;
    let verdict = if decay_rate <= 0.0 {
        Verdict::Diverged
    } else if oscillatory {
        Verdict::OscillatoryDecay
    } else {
        Verdict::Converged
    };
    StabilityReport {
        delay_over_eps,
        verdict,
        decay_rate,
        peak,
        final_value,
    }
}

/// Integrates with `dt = eps / 100` over `horizon` seconds and classifies.
pub fn simulate_dde(m: &ScalarDde, horizon: f64) -> Result<StabilityReport, FastLoopError> {
    simulate_dde_with_step(m, horizon, m.eps / 100.0)
}

pub fn simulate_dde_with_step(m: &ScalarDde, horizon: f64, dt: f64) -> Result<StabilityReport, FastLoopError> {
    m.validate()?;
    if !(dt > 0.0 && dt <= m.eps / 50.0) {
        return Err(FastLoopError::Invalid("dt must be in (0, eps/50]".into()));
    }
    Ok(analyze(&integrate(m, horizon, dt), m.eps, m.delay))
}

/// Parameters of a delay-boundary search, in units of `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    /// Simulation horizon per probe, in multiples of `eps`.
    pub horizon_eps: f64,
    /// Delay periods added to each probe's horizon.
    pub extra_delays: f64,
    /// `eps / dt`.
    pub steps_per_eps: f64,
    /// Grid points scanned before bisecting.
    pub scan_points: usize,
}

impl Default for BoundarySearch {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 3.0,
            tol: 1e-3,
            horizon_eps: 100.0,
            extra_delays: 5.0,
            steps_per_eps: 100.0,
            scan_points: 30,
        }
    }
}

fn probe(mode: LoopMode, k: f64, eps: f64, ratio: f64, s: &BoundarySearch) -> Result<Verdict, FastLoopError> {
    let m = ScalarDde::new(mode, k, eps, ratio * eps);
    let horizon = (s.horizon_eps + s.extra_delays * ratio) * eps;
    Ok(simulate_dde_with_step(&m, horizon, eps / s.steps_per_eps)?.verdict)
}

/// Smallest `tau / eps` in the bracket at which the loop diverges.
pub fn find_stability_boundary(mode: LoopMode, k: f64, eps: f64) -> Result<f64, FastLoopError> {
    find_stability_boundary_with(mode, k, eps, &BoundarySearch::default())
}

pub fn find_stability_boundary_with(
    mode: LoopMode,
    k: f64,
    eps: f64,
    s: &BoundarySearch,
) -> Result<f64, FastLoopError> {
    let no_boundary = FastLoopError::NoSignChange { lo: s.lo, hi: s.hi };
    if probe(mode, k, eps, s.lo, s)? == Verdict::Diverged {
        return Err(no_boundary);
    }
    // geometric scan for the first diverged grid point
    let n = s.scan_points.max(2);
    let mut prev = s.lo;
    let mut bracket = None;
    for i in 1..n {
        let r = s.lo * (s.hi / s.lo).powf(i as f64 / (n - 1) as f64);
        if probe(mode, k, eps, r, s)? == Verdict::Diverged {
            bracket = Some((prev, r));
            break;
        }
        prev = r;
    }
    let (mut lo, mut hi) = bracket.ok_or(no_boundary)?;
    while hi - lo > s.tol {
        let mid = 0.5 * (lo + hi);
        if probe(mode, k, eps, mid, s)? == Verdict::Diverged {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest `tau / eps` on a grid of step `step` up to `max` at which the
/// full-MPF loop response becomes under-damped.
pub fn find_oscillation_onset(k: f64, eps: f64, step: f64, max: f64) -> Option<f64> {
    let mut r = 0.0;
    while r <= max + 1e-12 {
        let m = ScalarDde::new(LoopMode::FullMpf, k, eps, r * eps);
        if let Ok(rep) = simulate_dde(&m, 100.0 * eps) {
            if rep.verdict == Verdict::OscillatoryDecay {
                return Some(r);
            }
        }
        r += step;
    }
    None
}

/// One row of a delay sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: LoopMode,
    pub k: f64,
    pub eps: f64,
    pub report: StabilityReport,
}

/// Evaluates every `(k, tau/eps)` combination. The horizon is
/// `100 eps` plus `extra_delays` delay periods.
pub fn sweep(
    mode: LoopMode,
    ks: &[f64],
    eps: f64,
    ratios: &[f64],
    extra_delays: f64,
    exec: Execution,
) -> Result<Vec<SweepPoint>, FastLoopError> {
    let combos: Vec<(f64, f64)> = ks.iter().flat_map(|&k| ratios.iter().map(move |&r| (k, r))).collect();
    exec::map_indexed(exec, combos.len(), |i| {
        let (k, r) = combos[i];
        let m = ScalarDde::new(mode, k, eps, r * eps);
        let horizon = 100.0 * eps + extra_delays * r * eps;
        simulate_dde(&m, horizon).map(|mut report| {
            report.delay_over_eps = r;
            SweepPoint { mode, k, eps, report }
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn no_delay_decays_at_one_over_eps() {
        let m = ScalarDde::new(LoopMode::FullMpf, 1.0, 0.2, 0.0);
        let r = simulate_dde(&m, 20.0).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        assert_abs_diff_eq!(r.decay_rate, 5.0, epsilon = 1e-6);
    }

    #[test]
    fn full_mpf_stable_below_and_unstable_above_pi_over_two() {
        let eps = 0.2;
        let below = simulate_dde(&ScalarDde::new(LoopMode::FullMpf, 1.0, eps, 1.5 * eps), 100.0 * eps).unwrap();
        assert_eq!(below.verdict, Verdict::OscillatoryDecay);
        let above = simulate_dde(&ScalarDde::new(LoopMode::FullMpf, 1.0, eps, 1.6 * eps), 100.0 * eps).unwrap();
        assert_eq!(above.verdict, Verdict::Diverged);
    }

    #[test]
    fn split_mpf_long_delay_converges() {
        let eps = 0.2;
        let r = simulate_dde(&ScalarDde::new(LoopMode::SplitMpf, 0.5, eps, 100.0 * eps), 100.0 * eps).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
    }

    #[test]
    fn split_gain_range() {
        assert_abs_diff_eq!(split_gain(1.0, 1.0), 0.5, epsilon = 1e-15);
        assert_eq!(split_gain(1.0, 0.0), 0.0);
        assert!(split_gain(3.0, 1.0) < 0.5);
    }

    #[test]
    fn boundary_is_pi_over_two() {
        let b = find_stability_boundary(LoopMode::FullMpf, 1.0, 0.2).unwrap();
        assert!((b - std::f64::consts::FRAC_PI_2).abs() < 0.05, "boundary {b}");
    }

    #[test]
    fn split_has_no_boundary() {
        let s = BoundarySearch {
            hi: 100.0,
            ..Default::default()
        };
        assert!(matches!(
            find_stability_boundary_with(LoopMode::SplitMpf, 0.5, 0.2, &s),
            Err(FastLoopError::NoSignChange { .. })
        ));
    }

    #[test]
    fn oscillation_onset_near_one_over_e() {
        let onset = find_oscillation_onset(1.0, 0.2, 0.01, 1.5).unwrap();
        assert!((0.3..=1.2).contains(&onset), "onset {onset}");
    }

    #[test]
    fn constant_forcing_sets_equilibrium() {
        let mut m = ScalarDde::new(LoopMode::FullMpf, 1.0, 0.2, 0.05);
        m.forcing = 1.0;
        let traj = integrate(&m, 20.0, m.eps / 100.0);
        assert_abs_diff_eq!(*traj.eta.last().unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(simulate_dde(&ScalarDde::new(LoopMode::FullMpf, 1.0, 0.0, 0.1), 1.0).is_err());
        assert!(simulate_dde(&ScalarDde::new(LoopMode::FullMpf, 0.0, 0.2, 0.1), 1.0).is_err());
    }
}
