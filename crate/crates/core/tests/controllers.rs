use mpf_core::barrier::{ConstraintRow, RowTag};
use mpf_core::controllers::{ControllerKind, SafetyFilter};
use mpf_core::dynamics::VehicleParams;
use mpf_core::exec::Execution;
use mpf_core::qp::QpSettings;
use proptest::prelude::*;

fn pair_row(a: f64, b: [f64; 4]) -> ConstraintRow {
    use mpf_core::barrier::AgentCoeff;
    ConstraintRow {
        a,
        coeffs: vec![
            AgentCoeff {
                agent: 0,
                b_delta: b[0],
                b_ac: b[1],
            },
            AgentCoeff {
                agent: 1,
                b_delta: b[2],
                b_ac: b[3],
            },
        ],
        tag: RowTag::Pair { i: 0, j: 1 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn controllers_stay_in_box_and_split_pins_own_channels(
        a in prop::collection::vec(-30.0..5.0f64, 20),
        b in prop::collection::vec(-200.0..200.0f64, 4),
        gain in 0.1..1.0f64,
        u0 in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let p = VehicleParams::default();
        let (lo, hi) = mpf_core::controllers::stacked_bounds(2, &p);
        for kind in [ControllerKind::NoMpf, ControllerKind::FullMpf, ControllerKind::SplitMpf] {
            let mut f = SafetyFilter::new(kind, 2, 0.2, p, QpSettings::default(), Execution::Sequential);
            let mut u_act: Option<Vec<f64>> = None;
            for &ak in &a {
                let row = pair_row(ak, [b[0], b[1], b[2], b[3]]);
                let u = f.step(&u0, &[row], u_act.as_deref(), 0.1).unwrap();
                for k in 0..4 {
                    prop_assert!(u[k] >= lo[k] && u[k] <= hi[k]);
                }
                if let Some(split) = f.split_state() {
                    for (c, sub) in split.subs.iter().enumerate() {
                        prop_assert_eq!(sub.bank.w[c], 0.0);
                    }
                }
                u_act = Some(u.iter().enumerate().map(|(k, x)| if k == 1 { gain * x } else { *x }).collect());
            }
        }
    }
}
