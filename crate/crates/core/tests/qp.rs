use mpf_core::qp::{solve, solve_traced, QpProblem, QpRow};
use proptest::prelude::*;

const W: f64 = 1e6;

#[test]
fn weighted_single_constraint() {
    // minimize 4 (x - 0)^2 + 1 (y - 0)^2 with x + y >= 1 (hard):
    // u = Q^-1 b / (b^T Q^-1 b) = (0.25, 1) / 1.25
    let p = QpProblem {
        u0: vec![0.0, 0.0],
        rows: vec![QpRow {
            a: -1.0,
            coeffs: vec![(0, 1.0), (1, 1.0)],
        }],
        lower: vec![-8.0; 2],
        upper: vec![4.0; 2],
        slack_weight: 1e9,
        weights: vec![4.0, 1.0],
    };
    let s = solve(&p, 1e-12, 100).unwrap();
    assert!((s.u_star[0] - 0.2).abs() < 1e-7);
    assert!((s.u_star[1] - 0.8).abs() < 1e-7);
}

fn arb_problem() -> impl Strategy<Value = QpProblem> {
    (1usize..=4, 0usize..=5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-6.0..6.0f64, n),
            prop::collection::vec((-10.0..5.0f64, prop::collection::vec(-50.0..50.0f64, n)), m),
            prop::collection::vec(0.1..100.0f64, n),
        )
            .prop_map(move |(u0, rows, weights)| QpProblem {
                u0,
                rows: rows
                    .into_iter()
                    .map(|(a, b)| QpRow {
                        a,
                        coeffs: b.into_iter().enumerate().collect(),
                    })
                    .collect(),
                lower: vec![-8.0; n],
                upper: vec![4.0; n],
                slack_weight: W,
                weights,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn objective_never_increases(p in arb_problem()) {
        let mut trace = Vec::new();
        let s = solve_traced(&p, 1e-8, 200, Some(&mut trace)).unwrap();
        for pair in trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12, "{:?}", trace);
        }
        prop_assert!(s.u_star.iter().zip(&p.lower).all(|(u, l)| u >= l));
        prop_assert!(s.u_star.iter().zip(&p.upper).all(|(u, h)| u <= h));
        for (r, sl) in p.rows.iter().zip(&s.slacks) {
            prop_assert!(*sl >= 0.0);
            prop_assert!(r.eval(&s.u_star) + sl >= -1e-9);
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical(p in arb_problem()) {
        let a = solve(&p, 1e-8, 200).unwrap();
        let b = solve(&p, 1e-8, 200).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.u_star), bits(&b.u_star));
        prop_assert_eq!(bits(&a.slacks), bits(&b.slacks));
        prop_assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn inactive_problems_return_the_reference(u0 in prop::collection::vec(-7.0..3.0f64, 1..5)) {
        let n = u0.len();
        let p = QpProblem {
            u0: u0.clone(),
            rows: vec![QpRow { a: 100.0, coeffs: vec![(0, 1.0)] }],
            lower: vec![-8.0; n],
            upper: vec![4.0; n],
            slack_weight: W,
            weights: Vec::new(),
        };
        prop_assert_eq!(solve(&p, 1e-8, 50).unwrap().u_star, u0);
    }
}
