use mpf_core::barrier::{ellipse_h, pair_constraint_row, CbfGains, EllipseParams};
use mpf_core::dynamics::{rk4, ControlInput, VehicleParams, VehicleState};
use mpf_core::qp::explicit_single_constraint;
use proptest::prelude::*;

#[test]
fn enforced_row_keeps_pair_safe() {
    // Follower closing on a slower leader; the follower's acceleration
    // enforces its row exactly in fast closed loop.
    let e = EllipseParams::default();
    let g = CbfGains::default();
    let p = VehicleParams::default();
    let mut lead = VehicleState::new(30.0, 0.0, 0.0, 15.0);
    let mut follow = VehicleState::new(0.0, 0.0, 0.0, 15.0);
    let h0 = ellipse_h(&follow, &lead, &e);
    assert!(h0 > 0.0);
    let dt = 1e-3;
    let mut min_h = h0;
    for _ in 0..10_000 {
        let row = pair_constraint_row(0, &follow, 1, &lead, &e, &g, &p);
        let b = [row.coeffs[0].b_delta, row.coeffs[0].b_ac];
        let lead_part = row.coeffs[1].b_ac * -2.0;
        let u = explicit_single_constraint(&[0.0, 3.0], row.a + lead_part, &b, &[0.0, 0.0]).unwrap();
        follow = rk4(&follow, &ControlInput::new(u[0], u[1]), &p, dt);
        lead = rk4(&lead, &ControlInput::new(0.0, -2.0), &p, dt);
        if lead.v <= 0.0 {
            lead.v = 0.0;
        }
        min_h = min_h.min(ellipse_h(&follow, &lead, &e));
    }
    assert!(min_h >= -0.01 * h0, "{min_h}");
}

fn arb_state() -> impl Strategy<Value = VehicleState> {
    (-40.0..40.0f64, -10.0..10.0f64, -3.0..3.0f64, 0.0..30.0f64)
        .prop_map(|(x, y, th, v)| VehicleState::new(x, y, th, v))
}

fn moved(s: &VehicleState, dx: f64, dy: f64, rot: f64) -> VehicleState {
    let (sn, cs) = rot.sin_cos();
    VehicleState::new(cs * s.x - sn * s.y + dx, sn * s.x + cs * s.y + dy, s.theta + rot, s.v)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ellipse_is_rigid_motion_invariant(
        si in arb_state(),
        sj in arb_state(),
        dx in -100.0..100.0f64,
        dy in -100.0..100.0f64,
        rot in -3.2..3.2f64,
    ) {
        let e = EllipseParams::default();
        let h = ellipse_h(&si, &sj, &e);
        let h2 = ellipse_h(&moved(&si, dx, dy, rot), &moved(&sj, dx, dy, rot), &e);
        prop_assert!((h - h2).abs() <= 1e-9, "{} vs {}", h, h2);
    }

    #[test]
    fn row_value_is_rigid_motion_invariant(
        si in arb_state(),
        sj in arb_state(),
        dx in -100.0..100.0f64,
        rot in -3.2..3.2f64,
    ) {
        let e = EllipseParams::default();
        let g = CbfGains::default();
        let p = VehicleParams::default();
        let r = pair_constraint_row(0, &si, 1, &sj, &e, &g, &p);
        let r2 = pair_constraint_row(0, &moved(&si, dx, 0.0, rot), 1, &moved(&sj, dx, 0.0, rot), &e, &g, &p);
        let scale = r.a.abs().max(1.0);
        prop_assert!((r.a - r2.a).abs() <= 1e-8 * scale);
        for (c, c2) in r.coeffs.iter().zip(&r2.coeffs) {
            prop_assert!((c.b_delta - c2.b_delta).abs() <= 1e-8 * c.b_delta.abs().max(1.0));
            prop_assert!((c.b_ac - c2.b_ac).abs() <= 1e-8 * c.b_ac.abs().max(1.0));
        }
    }
}
