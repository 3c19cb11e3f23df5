use mpf_core::dynamics::{ControlInput, VehicleState};
use mpf_core::impairment::{
    classify_channel, classify_passivity, default_grid, scalarized_real_part, ChannelModel, ChannelOp, DeltaModel,
    DeltaState, LtiChannel, Onset, Passivity,
};
use proptest::prelude::*;

const SIM_DT: f64 = 0.01;

fn run_accel(op: ChannelOp, input: &[f64]) -> Vec<f64> {
    let model = DeltaModel {
        accel: op,
        ..DeltaModel::IDENTITY
    };
    let mut d = DeltaState::new(model, SIM_DT);
    let s = VehicleState::new(0.0, 0.0, 0.0, 20.0);
    input
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            d.apply(ControlInput::new(0.0, u), k as f64 * SIM_DT, &s, ControlInput::ZERO)
                .ac
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clipping_twice_changes_nothing(input in prop::collection::vec(-20.0..20.0f64, 1..60), lo in -8.0..-1.0f64, hi in -0.5..4.0f64) {
        let op = ChannelOp::Clip { lo, hi };
        let once = run_accel(op, &input);
        prop_assert_eq!(run_accel(op, &once), once);
    }

    #[test]
    fn unit_gain_is_bitwise_identity(input in prop::collection::vec(-20.0..20.0f64, 1..60)) {
        let g = run_accel(ChannelOp::Gain { k: 1.0 }, &input);
        let id = run_accel(ChannelOp::Identity, &input);
        prop_assert_eq!(g.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), id.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn delay_shifts_by_whole_samples(input in prop::collection::vec(-20.0..20.0f64, 2..80), k in 1usize..20) {
        let out = run_accel(ChannelOp::PureDelay { delay: k as f64 * SIM_DT }, &input);
        for t in 0..input.len() {
            // the line starts filled with the first command
            let expected = if t < k { input[0] } else { input[t - k] };
            prop_assert_eq!(out[t], expected);
        }
    }

    #[test]
    fn gains_classify_by_sign(kappa in 1e-3..50.0f64) {
        let grid = default_grid();
        match classify_passivity(&LtiChannel::gain(kappa), &grid).unwrap() {
            Passivity::Isp { nu } => prop_assert!((nu - kappa).abs() <= 1e-12),
            other => prop_assert!(false, "{:?}", other),
        }
        let neg = classify_passivity(&LtiChannel::gain(-kappa), &grid).unwrap();
        prop_assert!(matches!(neg, Passivity::NotPassive { .. }), "{:?}", neg);
    }

    #[test]
    fn one_isp_channel_is_enough(b1 in 0.2..5.0f64, b2 in 0.2..5.0f64, s1 in any::<bool>(), s2 in any::<bool>(),
                                  kappa in 0.05..2.0f64, tau in 0.01..2.0f64) {
        let b = [if s1 { b1 } else { -b1 }, if s2 { b2 } else { -b2 }];
        let channels = [
            ChannelModel::Lti(LtiChannel::gain(kappa)),
            ChannelModel::Lti(LtiChannel::first_order(tau).unwrap()),
        ];
        let bb = b1 * b1 + b2 * b2;
        let floor = kappa * b1 * b1 / bb;
        for w in default_grid() {
            prop_assert!(scalarized_real_part(&b, &channels, w) >= floor - 1e-12);
        }
    }
}

#[test]
fn first_order_zoh_matches_continuous_step() {
    let tau = 0.37;
    let out = run_accel(
        ChannelOp::FirstOrder { tau },
        &[0.0; 1].iter().chain(&[1.0; 300]).copied().collect::<Vec<_>>(),
    );
    for (k, y) in out.iter().enumerate().skip(1) {
        let exact = 1.0 - (-((k - 1) as f64 + 1.0) * SIM_DT / tau).exp();
        assert!((y - exact).abs() <= 1e-12, "sample {k}: {y} vs {exact}");
    }
}

#[test]
fn delayed_onset_passes_commands_through() {
    let model = DeltaModel {
        steer: ChannelOp::Identity,
        accel: ChannelOp::Clip { lo: -8.0, hi: -0.2 },
        onset: Onset::AtTime { t: 1.0 },
    };
    let mut d = DeltaState::new(model, SIM_DT);
    let s = VehicleState::new(0.0, 0.0, 0.0, 20.0);
    let u = ControlInput::new(0.0, 2.0);
    assert_eq!(d.apply(u, 0.5, &s, ControlInput::ZERO).ac, 2.0);
    assert_eq!(d.apply(u, 1.0, &s, ControlInput::ZERO).ac, -0.2);
    // stays latched
    assert_eq!(d.apply(u, 0.0, &s, ControlInput::ZERO).ac, -0.2);
}

#[test]
fn operator_classes() {
    let grid = default_grid();
    assert!(matches!(
        classify_channel(&ChannelOp::Identity, &grid).unwrap(),
        Passivity::Isp { .. }
    ));
    assert_eq!(
        classify_channel(&ChannelOp::FirstOrder { tau: 0.4 }, &grid).unwrap(),
        Passivity::Passive
    );
    assert!(matches!(
        classify_channel(&ChannelOp::PureDelay { delay: 0.05 }, &grid).unwrap(),
        Passivity::NotPassive { .. }
    ));
    assert!(classify_channel(&ChannelOp::Clip { lo: -1.0, hi: 1.0 }, &grid).is_err());
}
