//! Two-vehicle experiment for the size of the constraint residual left by a
//! full-MPF filter around a strictly passive actuator.

use mpf_core::barrier::{pair_constraint_row, AgentCoeff, CbfGains, ConstraintRow, EllipseParams};
use mpf_core::controllers::{ControllerKind, SafetyFilter};
use mpf_core::dynamics::{step, ControlInput, VehicleParams, VehicleState};
use mpf_core::exec::Execution;
use mpf_core::qp::QpSettings;

#[derive(Debug, Clone, Copy)]
pub struct ResidualRun {
    /// Mean `|a + b . u_act|` over control instants with the row binding.
    pub mean_residual: f64,
    pub active_samples: usize,
    pub min_gap: f64,
}

/// A follower that wants 30 m/s behind a leader whose acceleration is
/// `1.5 sin(0.5 t)`, on one lane. The follower's acceleration channel
/// delivers half of what is commanded. Only the follower is controlled; the
/// leader's part of the row is folded into its constant term. Residuals are
/// averaged over `t >= 15 s` of a 40 s run.
pub fn residual_experiment(eps: f64, ctrl_dt: f64) -> ResidualRun {
    let p = VehicleParams::default();
    let e = EllipseParams::default();
    let g = CbfGains::default();
    let mut filter = SafetyFilter::new(
        ControllerKind::FullMpf,
        1,
        eps,
        p,
        QpSettings::default(),
        Execution::Sequential,
    );
    let mut follow = VehicleState::new(0.0, 0.0, 0.0, 20.0);
    let mut lead = VehicleState::new(40.0, 0.0, 0.0, 20.0);
    let lead_accel = |t: f64| 1.5 * (0.5 * t).sin();

    let steps = (40.0 / ctrl_dt).round() as usize;
    let mut u_act_prev: Option<Vec<f64>> = None;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut min_gap = f64::INFINITY;
    for k in 0..steps {
        let t = k as f64 * ctrl_dt;
        let full = pair_constraint_row(0, &follow, 1, &lead, &e, &g, &p);
        let row = ConstraintRow {
            a: full.a + full.coeffs[1].b_ac * lead_accel(t),
            coeffs: vec![AgentCoeff {
                agent: 0,
                ..full.coeffs[0]
            }],
            tag: full.tag,
        };
        let u0 = [0.0, 0.7 * (30.0 - follow.v)];
        let u_star = filter
            .step(&u0, std::slice::from_ref(&row), u_act_prev.as_deref(), ctrl_dt)
            .expect("single-row problem is well formed");
        let u_act = [u_star[0], 0.5 * u_star[1]];
        let w = &filter.full_bank().expect("full-MPF filter").w;
        let shifted = row.eval(&[u_star[0] + w[0], u_star[1] + w[1]]);
        if t >= 15.0 && shifted <= 1e-6 {
            sum += row.eval(&u_act).abs();
            count += 1;
        }
        follow = step(&follow, &ControlInput::new(u_act[0], u_act[1]), &p, ctrl_dt);
        lead = step(&lead, &ControlInput::new(0.0, lead_accel(t)), &p, ctrl_dt);
        min_gap = min_gap.min(lead.x - follow.x);
        u_act_prev = Some(u_act.to_vec());
    }
    ResidualRun {
        mean_residual: sum / count.max(1) as f64,
        active_samples: count,
        min_gap,
    }
}
